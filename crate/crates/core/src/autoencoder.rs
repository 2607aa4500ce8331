//! 14-layer convolutional autoencoder. Its first seven layers are the
//! encoder whose flattened 8×8×8 output is the 512-dimensional embedding
//! used for visual search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{decode_image, DatasetManifest};
use crate::error::{contract_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::search::EmbeddingStore;
use crate::tensor::{Activation, LayerSpec, Network, Shape, Tensor};
use crate::train::{self, Example, FitOptions, Objective, TrainHistory};

pub const INPUT_SHAPE: Shape = Shape::new(64, 64, 3);
pub const EMBEDDING_DIM: usize = 512;
/// Flattened size of an original 80×60×3 catalog image.
pub const ORIGINAL_INPUT_LEN: usize = 14_400;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderSpec {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        use Activation::{Relu, Sigmoid};
        let up = LayerSpec::UpsampleNearest { factor: 2 };
        Self {
            encoder: vec![
                LayerSpec::conv3x3(3, 16, Relu),
                LayerSpec::pool2(),
                LayerSpec::conv3x3(16, 16, Relu),
                LayerSpec::pool2(),
                LayerSpec::conv3x3(16, 8, Relu),
                LayerSpec::pool2(),
                LayerSpec::conv3x3(8, 8, Relu),
            ],
            decoder: vec![
                LayerSpec::conv3x3(8, 8, Relu),
                up,
                LayerSpec::conv3x3(8, 16, Relu),
                up,
                LayerSpec::conv3x3(16, 16, Relu),
                up,
                LayerSpec::conv3x3(16, 3, Sigmoid),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Zero disables early stopping.
    pub early_stop_patience: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_patience: 5,
            shuffle_seed: 0,
        }
    }
}

/// Encoder followed by decoder, initialized deterministically from `init_seed`.
pub fn build_autoencoder<T: Scalar>(spec: &AutoencoderSpec, init_seed: u64) -> Result<Network<T>> {
    if spec.encoder.len() != spec.decoder.len() {
        return contract_err("encoder and decoder must have the same depth");
    }
    let layers: Vec<LayerSpec> = spec.encoder.iter().chain(&spec.decoder).copied().collect();
    let net = Network::new(layers, &mut ChaCha8Rng::seed_from_u64(init_seed))?;
    let out = net.output_shape(INPUT_SHAPE)?;
    if out != INPUT_SHAPE {
        return shape_err(format!("autoencoder maps {INPUT_SHAPE} to {out}"));
    }
    Ok(net)
}

fn check_image<T: Scalar>(image: &Tensor<T>) -> Result<()> {
    if image.shape() != INPUT_SHAPE {
        return shape_err(format!(
            "autoencoder input must be {INPUT_SHAPE}, got {}",
            image.shape()
        ));
    }
    Ok(())
}

fn unlabeled<T: Scalar>(images: &[Tensor<T>]) -> Vec<Example<'_, T>> {
    images
        .iter()
        .map(|input| Example { input, label: 0 })
        .collect()
}

fn encoder_depth<T: Scalar>(net: &Network<T>) -> usize {
    net.layers().len() / 2
}

/// Minimizes reconstruction MSE. With early stopping the parameters of the
/// best validation epoch are restored; without it, the best epoch is still
/// the one returned.
pub fn train_autoencoder<T: Scalar>(
    net: &mut Network<T>,
    train_images: &[Tensor<T>],
    val_images: &[Tensor<T>],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if let Some(bad) = train_images
        .iter()
        .chain(val_images)
        .find(|t| t.shape() != INPUT_SHAPE)
    {
        return shape_err(format!(
            "autoencoder input must be {INPUT_SHAPE}, got {}",
            bad.shape()
        ));
    }
    train::fit(
        net,
        &unlabeled(train_images),
        &unlabeled(val_images),
        &FitOptions {
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            early_stop_patience: config.early_stop_patience,
            plateau: None,
            augment: None,
            seed: config.shuffle_seed,
        },
        Objective::Reconstruction,
    )
}

/// Flattened encoder output. Relu makes every component nonnegative.
pub fn encode<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<Vec<T>> {
    check_image(image)?;
    Ok(net.infer_prefix(image, encoder_depth(net))?.into_vec())
}

pub fn reconstruct<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    check_image(image)?;
    net.infer(image)
}

/// Mean reconstruction MSE over `images` in inference mode.
pub fn reconstruction_loss<T: Scalar>(net: &Network<T>, images: &[Tensor<T>]) -> Result<f64> {
    if let Some(bad) = images.iter().find(|t| t.shape() != INPUT_SHAPE) {
        return shape_err(format!(
            "autoencoder input must be {INPUT_SHAPE}, got {}",
            bad.shape()
        ));
    }
    Ok(train::evaluate(net, &unlabeled(images), Objective::Reconstruction)?.0)
}

/// Embeds every record of a manifest, in manifest order.
pub fn embed_manifest(net: &Network<f32>, manifest: &DatasetManifest) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new();
    for record in &manifest.records {
        let image = decode_image(manifest.image_path(record.id), manifest.target_size)?;
        store.add(record.id, &encode(net, &image)?)?;
    }
    Ok(store)
}
