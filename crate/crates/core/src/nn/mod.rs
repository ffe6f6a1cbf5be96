//! Dense tensors and hand-differentiated layers.
//!
//! Everything is generic over [`Real`], so the same code runs in `f32` for training
//! and in `f64` for finite-difference gradient checks.

pub mod adadelta;
pub mod batchnorm;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod lstm;
pub mod model;
pub mod tensor;

pub use adadelta::Adadelta;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{BlstmSizeMeans, ConvLayerSpec, ModelConfig, Variant};
pub use model::Model;
pub use tensor::{Real, Tensor};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("feature map height is {0}, expected 1")]
    NonUnitHeight(usize),
    #[error("{height}x{width} map is not divisible by the {}x{} pool window", .window.0, .window.1)]
    IndivisiblePool {
        height: usize,
        width: usize,
        window: (usize, usize),
    },
    #[error("input width {width} is below the minimum {min} for this model")]
    InputTooNarrow { width: usize, min: usize },
    #[error("input height {got}, model expects {expected}")]
    InputHeight { got: usize, expected: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    ConfigText(#[from] crate::config::ConfigError),
    #[error("unknown layer {name:?}; valid layers: {}", .valid.join(", "))]
    UnknownLayer { name: String, valid: Vec<String> },
}

pub type Result<T> = std::result::Result<T, NnError>;
