//! Segmentation-free word-image transcription.
//!
//! The crate covers the whole recognition pipeline:
//!
//! * [`imaging`]: grayscale rasters, PGM I/O, resampling, perspective warps and compositing.
//! * [`synthgen`]: synthetic word-image rendering from a vocabulary and a glyph atlas.
//! * [`nn`]: dense tensors and hand-differentiated layers (convolution, pooling,
//!   batch normalization, bidirectional LSTM, linear + log-softmax), the CNN-BLSTM
//!   recognizer, Adadelta, checkpoints and finite-difference gradient checking.
//! * [`ctc`]: CTC loss (log-space forward-backward), greedy and prefix-beam decoding,
//!   and a brute-force path enumerator used as an oracle.
//! * [`eval`]: Levenshtein distance, character and word recognition rates.
//! * [`train`] and [`recognizer`]: the training loop and image-to-text inference.

pub mod config;
pub mod ctc;
pub mod eval;
pub mod imaging;
pub mod nn;
pub mod recognizer;
pub mod rng;
pub mod synthgen;
pub mod train;

pub use imaging::Image;
pub use nn::{Real, Tensor};
pub use synthgen::LabelMap;


