//! Visual product search and classification for fashion catalogs.
//!
//! The numeric core ([`tensor`]) is generic over [`Scalar`] so the same
//! layers train in `f32` and are gradient-checked in `f64`. Concrete aliases
//! for both precisions live at the crate root.

pub mod autoencoder;
mod binio;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod scalar;
pub mod search;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{LayerSpec, Network, Shape, Tensor};

/// Image / activation tensor in training precision.
pub type ImageTensor = Tensor<f32>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
