//! Product classifiers: a small from-scratch CNN over images, and a dense
//! head trained on frozen, externally produced embeddings.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::INPUT_SHAPE;
use crate::dataset::{decode_image, AugmentConfig, DatasetManifest};
use crate::error::{contract_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::search::{import_embeddings, EmbeddingStore};
use crate::tensor::{softmax, Activation, LayerSpec, Network, Shape, Tensor};
use crate::train::{self, Example, FitOptions, Objective, PlateauConfig, TrainHistory};

pub const HEAD_WIDTH: usize = 256;
pub const DROPOUT_RATE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Conv stack over 64×64×3 images.
    ScratchCnn,
    /// Dense head over `input_dim`-dimensional embeddings.
    EmbeddingHead { input_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub mode: ClassifierMode,
    pub n_classes: usize,
}

impl ClassifierSpec {
    pub fn layers(&self) -> Vec<LayerSpec> {
        use Activation::{Linear, Relu};
        let head = [
            LayerSpec::Dropout { rate: DROPOUT_RATE },
            LayerSpec::dense(HEAD_WIDTH, self.n_classes, Linear),
        ];
        let mut layers = match self.mode {
            ClassifierMode::ScratchCnn => vec![
                LayerSpec::conv3x3(3, 16, Relu),
                LayerSpec::pool2(),
                LayerSpec::conv3x3(16, 32, Relu),
                LayerSpec::pool2(),
                LayerSpec::conv3x3(32, 32, Relu),
                LayerSpec::pool2(),
                LayerSpec::Flatten,
                LayerSpec::dense(8 * 8 * 32, HEAD_WIDTH, Relu),
            ],
            ClassifierMode::EmbeddingHead { input_dim } => {
                vec![LayerSpec::dense(input_dim, HEAD_WIDTH, Relu)]
            }
        };
        layers.extend(head);
        layers
    }

    pub fn input_shape(&self) -> Shape {
        match self.mode {
            ClassifierMode::ScratchCnn => INPUT_SHAPE,
            ClassifierMode::EmbeddingHead { input_dim } => Shape::vector(input_dim),
        }
    }
}

/// Recovers the mode from a loaded network's first layer.
pub fn mode_of<T: Scalar>(net: &Network<T>) -> Option<ClassifierMode> {
    match net.layers().first()? {
        LayerSpec::Conv { .. } => Some(ClassifierMode::ScratchCnn),
        LayerSpec::Dense { in_size, .. } => Some(ClassifierMode::EmbeddingHead {
            input_dim: *in_size,
        }),
        _ => None,
    }
}

/// Number of classes a network predicts (its final layer width).
pub fn n_classes_of<T: Scalar>(net: &Network<T>) -> Option<usize> {
    match net.layers().last()? {
        LayerSpec::Dense { out_size, .. } => Some(*out_size),
        _ => None,
    }
}

pub fn build_classifier<T: Scalar>(spec: &ClassifierSpec, seed: u64) -> Result<Network<T>> {
    if spec.n_classes < 2 {
        return contract_err(format!(
            "a classifier needs at least 2 classes, got {}",
            spec.n_classes
        ));
    }
    let net = Network::new(spec.layers(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    net.output_shape(spec.input_shape())?;
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Zero disables early stopping.
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Training-time augmentation; ignored for embedding inputs.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_patience: 5,
            plateau_patience: 3,
            plateau_factor: 0.5,
            min_lr: 1e-5,
            augment: Some(AugmentConfig::default()),
            seed: 0,
        }
    }
}

/// Probabilities aligned with the manifest vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities(pub Vec<f64>);

impl ClassProbabilities {
    /// Most probable class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn labeled<T: Scalar>(set: &[(Tensor<T>, usize)], n_classes: usize) -> Result<Vec<Example<'_, T>>> {
    set.iter()
        .map(|(input, label)| {
            if *label >= n_classes {
                return contract_err(format!("label {label} outside {n_classes} classes"));
            }
            Ok(Example {
                input,
                label: *label,
            })
        })
        .collect()
}

/// Trains on in-memory `(input, class)` pairs with early stopping,
/// reduce-on-plateau and (for image inputs) augmentation of training items.
pub fn fit_classifier<T: Scalar>(
    net: &mut Network<T>,
    train_set: &[(Tensor<T>, usize)],
    val_set: &[(Tensor<T>, usize)],
    config: &FitConfig,
) -> Result<TrainHistory> {
    if !(config.plateau_factor > 0.0 && config.plateau_factor < 1.0) {
        return contract_err(format!(
            "plateau factor {} is not in (0, 1)",
            config.plateau_factor
        ));
    }
    let n_classes = n_classes_of(net)
        .ok_or_else(|| Error::Contract("network has no dense output layer".into()))?;
    let images = matches!(mode_of(net), Some(ClassifierMode::ScratchCnn));
    let (train_ex, val_ex) = (labeled(train_set, n_classes)?, labeled(val_set, n_classes)?);
    train::fit(
        net,
        &train_ex,
        &val_ex,
        &FitOptions {
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            early_stop_patience: config.early_stop_patience,
            plateau: Some(PlateauConfig {
                patience: config.plateau_patience,
                factor: config.plateau_factor,
                min_lr: config.min_lr,
            }),
            augment: if images { config.augment } else { None },
            seed: config.seed,
        },
        Objective::Classification { n_classes },
    )
}

/// Softmax over the network's logits.
pub fn predict<T: Scalar>(net: &Network<T>, input: &Tensor<T>) -> Result<ClassProbabilities> {
    let logits = net.infer(input)?;
    if logits.shape().height != 1 || logits.shape().width != 1 {
        return shape_err(format!(
            "classifier produced {} instead of a vector",
            logits.shape()
        ));
    }
    Ok(ClassProbabilities(
        softmax(logits.as_slice())
            .into_iter()
            .map(Scalar::to_f64_lossy)
            .collect(),
    ))
}

/// Where classifier inputs come from.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    /// Decode `{id}.jpg` from the manifest's image directory.
    Images,
    /// Look ids up in a frozen embedding store.
    Embeddings(&'a EmbeddingStore),
}

/// `(input, class index)` pairs for `ids`, in order.
pub fn load_examples(
    manifest: &DatasetManifest,
    ids: &[u64],
    features: Features<'_>,
) -> Result<Vec<(Tensor<f32>, usize)>> {
    manifest
        .labeled(ids)?
        .into_iter()
        .map(|(record, class)| {
            let input = match features {
                Features::Images => {
                    decode_image(manifest.image_path(record.id), manifest.target_size)?
                }
                Features::Embeddings(store) => {
                    let v = store.get(record.id).ok_or(Error::Lookup(record.id))?;
                    Tensor::vector(v.to_vec())
                }
            };
            Ok((input, class))
        })
        .collect()
}

/// Image classifier trained on the manifest's train split, monitored on
/// its validation split.
pub fn train_classifier(
    net: &mut Network<f32>,
    manifest: &DatasetManifest,
    config: &FitConfig,
) -> Result<TrainHistory> {
    if manifest.splits.train.is_empty() || manifest.splits.validation.is_empty() {
        return contract_err("manifest has an empty train or validation split");
    }
    let train_set = load_examples(manifest, &manifest.splits.train, Features::Images)?;
    let val_set = load_examples(manifest, &manifest.splits.validation, Features::Images)?;
    fit_classifier(net, &train_set, &val_set, config)
}

/// Trains a fresh dense head on frozen embeddings. Ids in the store that
/// the manifest does not mention are ignored.
pub fn train_embedding_head_from_store(
    store: &EmbeddingStore,
    manifest: &DatasetManifest,
    config: &FitConfig,
) -> Result<(Network<f32>, TrainHistory)> {
    let Some(input_dim) = store.dimension() else {
        return Err(Error::Schema("embedding store is empty".into()));
    };
    let spec = ClassifierSpec {
        mode: ClassifierMode::EmbeddingHead { input_dim },
        n_classes: manifest.n_classes(),
    };
    let mut net = build_classifier(&spec, config.seed)?;
    if manifest.splits.train.is_empty() || manifest.splits.validation.is_empty() {
        return contract_err("manifest has an empty train or validation split");
    }
    let features = Features::Embeddings(store);
    let train_set = load_examples(manifest, &manifest.splits.train, features)?;
    let val_set = load_examples(manifest, &manifest.splits.validation, features)?;
    let history = fit_classifier(&mut net, &train_set, &val_set, config)?;
    Ok((net, history))
}

pub fn train_embedding_head(
    embedding_file: impl AsRef<Path>,
    manifest: &DatasetManifest,
    config: &FitConfig,
) -> Result<(Network<f32>, TrainHistory)> {
    let store = import_embeddings(embedding_file, None)?;
    train_embedding_head_from_store(&store, manifest, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(d: usize, n: usize) -> Network<f64> {
        build_classifier(
            &ClassifierSpec {
                mode: ClassifierMode::EmbeddingHead { input_dim: d },
                n_classes: n,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn architectures() {
        let net: Network<f32> = build_classifier(
            &ClassifierSpec {
                mode: ClassifierMode::ScratchCnn,
                n_classes: 23,
            },
            3,
        )
        .unwrap();
        assert_eq!(net.output_shape(INPUT_SHAPE).unwrap(), Shape::vector(23));
        assert_eq!(mode_of(&net), Some(ClassifierMode::ScratchCnn));
        assert_eq!(n_classes_of(&net), Some(23));
        let h = head(512, 12);
        assert_eq!(
            h.layers()[0],
            LayerSpec::dense(512, HEAD_WIDTH, Activation::Relu)
        );
        assert_eq!(
            mode_of(&h),
            Some(ClassifierMode::EmbeddingHead { input_dim: 512 })
        );
        assert_eq!(head(512, 15), head(512, 15));
        let one = build_classifier::<f32>(
            &ClassifierSpec {
                mode: ClassifierMode::ScratchCnn,
                n_classes: 1,
            },
            0,
        );
        assert!(one.is_err());
    }

    #[test]
    fn zeroed_final_layer_is_uniform() {
        let mut net = head(4, 2);
        let last = net.params_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        let p = predict(&net, &Tensor::vector(vec![0.3, -1.0, 2.0, 0.5])).unwrap();
        assert_eq!(p.0, vec![0.5, 0.5]);
    }

    #[test]
    fn bias_shift_keeps_argmax() {
        let mut net = head(6, 5);
        let x = Tensor::vector(vec![0.1, 0.9, -0.4, 0.3, 0.0, 1.2]);
        let before = predict(&net, &x).unwrap();
        assert!((before.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for b in &mut net.params_mut().last_mut().unwrap().bias {
            *b += 3.7;
        }
        let after = predict(&net, &x).unwrap();
        assert_eq!(before.argmax(), after.argmax());
        assert!(predict(&net, &Tensor::vector(vec![1.0; 5])).is_err());
    }

    #[test]
    fn deterministic_without_augmentation() {
        let data: Vec<(Tensor<f64>, usize)> = (0..20)
            .map(|i| {
                let c = i % 2;
                (
                    Tensor::vector(vec![c as f64 + 0.01 * i as f64, 1.0 - c as f64]),
                    c,
                )
            })
            .collect();
        let config = FitConfig {
            epochs: 4,
            batch_size: 4,
            augment: None,
            ..FitConfig::default()
        };
        let run = || {
            let mut net = head(2, 2);
            let h = fit_classifier(&mut net, &data[..16], &data[16..], &config).unwrap();
            (net, h)
        };
        assert_eq!(run(), run());
        let mut net = head(2, 2);
        assert!(fit_classifier(&mut net, &[], &data, &config).is_err());
        let bad = FitConfig {
            plateau_factor: 1.0,
            ..config
        };
        assert!(fit_classifier(&mut net, &data, &data, &bad).is_err());
    }
}
