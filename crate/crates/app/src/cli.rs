//! `fsearch` subcommands. Each command writes its human-readable summary to
//! the supplied writer so tests can capture it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fsearch_core::autoencoder::{self, AutoencoderSpec, TrainConfig, INPUT_SHAPE};
use fsearch_core::classifier::{
    self, build_classifier, ClassProbabilities, ClassifierMode, ClassifierSpec, Features, FitConfig,
};
use fsearch_core::dataset::{
    decode_image, DatasetManifest, LabelScheme, PrepOptions, DEFAULT_MIN_CLASS_SIZE,
    DEFAULT_SPLIT_SEED, DEFAULT_TEST_FRACTION, DEFAULT_VAL_FRACTION,
};
use fsearch_core::eval::EvalReport;
use fsearch_core::search::{import_embeddings, load_store, save_store};
use fsearch_core::tensor::{load_weights, save_weights};
use fsearch_core::train::TrainHistory;
use fsearch_core::{ImageTensor, Network32};

use crate::config::ServiceConfig;
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "fsearch",
    version,
    about = "Visual search and classification for fashion catalogs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset manifest from styles.csv and an image directory.
    Prep(PrepArgs),
    /// Train the convolutional autoencoder on a manifest's train split.
    TrainAe(TrainAeArgs),
    /// Embed every manifest image with a trained autoencoder.
    Embed(EmbedArgs),
    /// Train a classifier from scratch or as a head over embeddings.
    TrainClf(TrainClfArgs),
    /// Evaluate a classifier on one split of a manifest.
    Evaluate(EvaluateArgs),
    /// Find the catalog products most similar to an image.
    Search(SearchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

fn parse_scheme(s: &str) -> Result<LabelScheme, String> {
    s.parse().map_err(|e: fsearch_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Catalog metadata CSV.
    #[arg(long)]
    pub styles: PathBuf,
    /// Directory of `{id}.jpg` images.
    #[arg(long)]
    pub images: PathBuf,
    /// gender-master, sub-category or article-type.
    #[arg(long, default_value = "article-type", value_parser = parse_scheme)]
    pub scheme: LabelScheme,
    #[arg(long, default_value_t = DEFAULT_MIN_CLASS_SIZE)]
    pub min_class_size: usize,
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
    /// Manifest JSON to write.
    #[arg(long, default_value = "manifest.json")]
    pub out: PathBuf,
}

/// Options shared by both training commands.
#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Seeds weight initialization, shuffling, dropout and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Weights file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Use at most this many images from each of the train and validation splits.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Autoencoder weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Embedding store to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Convolutional network over 64x64 images.
    Scratch,
    /// Dense head over precomputed embeddings.
    Head,
}

#[derive(Debug, Args)]
pub struct TrainClfArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// FEMB embedding store; required for `--mode head`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Weights file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Epochs without improvement before the learning rate is halved.
    #[arg(long, default_value_t = 3)]
    pub plateau_patience: usize,
    /// Disable training-time augmentation (scratch mode only).
    #[arg(long)]
    pub no_augment: bool,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Classifier weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Embedding store; required for embedding-head classifiers.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Report JSON to write.
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Also write the normalized confusion matrix as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Query image (any size; resized to 64x64).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Embedding store to search.
    #[arg(long)]
    pub store: PathBuf,
    /// Autoencoder weights used to embed the query.
    #[arg(long)]
    pub weights: PathBuf,
    /// Manifest supplying labels for the result table.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config JSON.
    #[arg(long)]
    pub config: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Prep(args) => prep(&args, out),
        Command::TrainAe(args) => train_ae(&args, out),
        Command::Embed(args) => embed(&args, out),
        Command::TrainClf(args) => train_clf(&args, out),
        Command::Evaluate(args) => evaluate(&args, out),
        Command::Search(args) => search(&args, out),
        Command::Serve(args) => serve(&args),
    }
}

fn load_manifest(path: &Path) -> anyhow::Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn load_network(path: &Path) -> anyhow::Result<Network32> {
    load_weights(path).with_context(|| format!("loading weights {}", path.display()))
}

fn write_history(history: &TrainHistory, path: Option<&Path>) -> anyhow::Result<()> {
    if let Some(path) = path {
        let mut file = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        history.write_csv(&mut file)?;
        file.flush()?;
    }
    Ok(())
}

fn summarize(history: &TrainHistory, out: &mut dyn Write) -> anyhow::Result<()> {
    for e in 0..history.epochs_run {
        write!(
            out,
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}",
            e + 1,
            history.train_loss[e],
            history.val_loss[e]
        )?;
        if let (Some(ta), Some(va)) = (history.train_acc.get(e), history.val_acc.get(e)) {
            write!(out, "  train_acc {ta:.4}  val_acc {va:.4}")?;
        }
        writeln!(out, "  lr {:.2e}", history.learning_rate[e])?;
    }
    if let Some(best) = history.best_epoch {
        writeln!(
            out,
            "best epoch {} (val_loss {:.6}){}",
            best + 1,
            history.val_loss[best],
            if history.stopped_early {
                ", stopped early"
            } else {
                ""
            }
        )?;
    }
    Ok(())
}

fn prep(args: &PrepArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let options = PrepOptions {
        scheme: args.scheme,
        min_count: args.min_class_size,
        seed: args.seed,
        test_fraction: args.test_fraction,
        val_fraction: args.val_fraction,
        ..PrepOptions::default()
    };
    let (manifest, stats) = DatasetManifest::prepare(&args.styles, &args.images, &options)
        .with_context(|| format!("preparing {}", args.styles.display()))?;
    manifest
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    writeln!(
        out,
        "loaded {} rows ({} skipped)",
        stats.loaded, stats.skipped_rows
    )?;
    writeln!(out, "matched {} images", stats.matched)?;
    writeln!(
        out,
        "scheme {}: {} classes -> {} with at least {} images",
        args.scheme, stats.classes_before, stats.classes_after, args.min_class_size
    )?;
    writeln!(out, "retained {} images", stats.retained)?;
    writeln!(
        out,
        "splits: train {} / validation {} / test {}",
        manifest.splits.train.len(),
        manifest.splits.validation.len(),
        manifest.splits.test.len()
    )?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn decode_split(
    manifest: &DatasetManifest,
    ids: &[u64],
    limit: Option<usize>,
) -> anyhow::Result<Vec<ImageTensor>> {
    let n = limit.unwrap_or(ids.len()).min(ids.len());
    ids[..n]
        .iter()
        .map(|&id| {
            let path = manifest.image_path(id);
            decode_image(&path, manifest.target_size)
                .with_context(|| format!("decoding {}", path.display()))
        })
        .collect()
}

fn train_ae(args: &TrainAeArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let train = decode_split(&manifest, &manifest.splits.train, args.limit)?;
    let val = decode_split(&manifest, &manifest.splits.validation, args.limit)?;
    let t = &args.training;
    let mut net = autoencoder::build_autoencoder::<f32>(&AutoencoderSpec::default(), t.seed)?;
    writeln!(
        out,
        "training autoencoder on {} images ({} validation)",
        train.len(),
        val.len()
    )?;
    let history = autoencoder::train_autoencoder(
        &mut net,
        &train,
        &val,
        &TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.lr,
            early_stop_patience: t.patience,
            shuffle_seed: t.seed,
        },
    )?;
    summarize(&history, out)?;
    save_weights(&net, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    write_history(&history, t.history.as_deref())?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn embed(args: &EmbedArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let net = load_network(&args.weights)?;
    let store = autoencoder::embed_manifest(&net, &manifest)?;
    save_store(&store, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    writeln!(
        out,
        "embedded {} images ({} dimensions) into {}",
        store.len(),
        store.dimension().unwrap_or(0),
        args.out.display()
    )?;
    Ok(())
}

fn train_clf(args: &TrainClfArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let t = &args.training;
    let config = FitConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        early_stop_patience: t.patience,
        plateau_patience: args.plateau_patience,
        augment: if args.no_augment {
            None
        } else {
            FitConfig::default().augment
        },
        seed: t.seed,
        ..FitConfig::default()
    };
    let (net, history) = match args.mode {
        ModeArg::Scratch => {
            let spec = ClassifierSpec {
                mode: ClassifierMode::ScratchCnn,
                n_classes: manifest.n_classes(),
            };
            let mut net = build_classifier::<f32>(&spec, t.seed)?;
            let history = classifier::train_classifier(&mut net, &manifest, &config)?;
            (net, history)
        }
        ModeArg::Head => {
            let path = args
                .embeddings
                .as_ref()
                .context("--mode head needs --embeddings")?;
            classifier::train_embedding_head(path, &manifest, &config)
                .with_context(|| format!("training on {}", path.display()))?
        }
    };
    summarize(&history, out)?;
    save_weights(&net, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    write_history(&history, t.history.as_deref())?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let net = load_network(&args.weights)?;
    anyhow::ensure!(
        classifier::n_classes_of(&net) == Some(manifest.n_classes()),
        "classifier output does not match the manifest's {} classes",
        manifest.n_classes()
    );
    let store = match (classifier::mode_of(&net), &args.embeddings) {
        (Some(ClassifierMode::EmbeddingHead { .. }), Some(path)) => Some(
            import_embeddings(path, None)
                .with_context(|| format!("loading embeddings {}", path.display()))?,
        ),
        (Some(ClassifierMode::EmbeddingHead { .. }), None) => {
            anyhow::bail!("this is an embedding-head classifier; pass --embeddings")
        }
        _ => None,
    };
    let features = store
        .as_ref()
        .map_or(Features::Images, Features::Embeddings);
    let ids = match args.split {
        SplitArg::Train => &manifest.splits.train,
        SplitArg::Validation => &manifest.splits.validation,
        SplitArg::Test => &manifest.splits.test,
    };
    let examples = classifier::load_examples(&manifest, ids, features)?;
    let truth: Vec<usize> = examples.iter().map(|(_, c)| *c).collect();
    let probabilities = examples
        .iter()
        .map(|(input, _)| classifier::predict(&net, input))
        .collect::<Result<Vec<ClassProbabilities>, _>>()?;
    let report = EvalReport::from_predictions(&manifest.vocabulary, &truth, &probabilities)?;

    let file = BufWriter::new(
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    serde_json::to_writer_pretty(file, &report)?;
    if let Some(path) = &args.csv {
        let mut file = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        report.write_normalized_csv(&mut file)?;
        file.flush()?;
    }
    writeln!(
        out,
        "{} samples, accuracy {:.4}",
        report.n_samples, report.accuracy
    )?;
    write!(out, "{}", report.render_grid())?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn search(args: &SearchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let net = load_network(&args.weights)?;
    let store = load_store(&args.store)
        .with_context(|| format!("loading store {}", args.store.display()))?;
    let manifest = args.manifest.as_deref().map(load_manifest).transpose()?;
    let query = decode_image::<f32>(&args.image, (INPUT_SHAPE.height, INPUT_SHAPE.width))
        .with_context(|| format!("decoding {}", args.image.display()))?;
    let embedding = autoencoder::encode(&net, &query)?;
    let hits = store.top_k(&embedding, args.k as usize)?;
    writeln!(
        out,
        "{:>4}  {:>10}  {:>8}  {:<20}  name",
        "rank", "id", "score", "article type"
    )?;
    for (rank, hit) in hits.iter().enumerate() {
        let record = manifest.as_ref().and_then(|m| m.record(hit.id));
        writeln!(
            out,
            "{:>4}  {:>10}  {:>8.4}  {:<20}  {}",
            rank + 1,
            hit.id,
            hit.score,
            record.map_or("", |r| r.article_type.as_str()),
            record.map_or("", |r| r.display_name.as_str())
        )?;
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let config = ServiceConfig::load(&args.config)?;
    let state = Arc::new(AppState::load(config)?);
    tokio::runtime::Runtime::new()?.block_on(service::serve(state))
}
