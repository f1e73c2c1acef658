//! A small 1D convolutional classifier written from scratch.
//!
//! Architecture (defaults):
//!
//! ```text
//! input 50×13
//! conv(64, k=4) → batch norm → ReLU → dropout 0.4      47×64
//! conv(64, k=4) → batch norm → ReLU → dropout 0.4      44×64
//! flatten                                              2816
//! dense(100) → batch norm → ReLU                       100
//! dense(26) → softmax                                  26
//! ```
//!
//! Everything is generic over [`Real`] so the same code trains in `f32` and
//! runs finite-difference checks in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use model::{ForwardCache, Gradients, ModelConfig, ModelParams};
pub use train::{predict, train, Prediction, TrainConfig, TrainHistory};

/// Floating-point element type of the engine.
pub trait Real: NdFloat + FromPrimitive + Default {}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite value fits element type")
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 elements per feature in train mode, got {0}")]
    DegenerateBatch(usize),
    #[error("backward pass does not match the cached forward pass: {0}")]
    StateMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training set mixes upper- and lowercase samples")]
    MixedCases,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
