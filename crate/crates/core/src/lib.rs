//! Speech-sound-disorder screening pipeline.
//!
//! ```text
//! WAV -> audio -> augment (training only) -> features -> nnet -> trainer
//!                          dataset (manifest, folds, class weights)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! - [`audio`]: PCM decode/encode, mono clips, band-limited resampling.
//! - [`augment`]: six waveform augmentations and the nine-fold expansion.
//! - [`features`]: three-channel log-Mel feature maps.
//! - [`dataset`]: manifests, label consistency, stratified folds, class
//!   weights, experiment materialization and a synthetic corpus generator.
//! - [`nnet`]: tensors, a small CNN with hand-written backward pass, Adam.
//! - [`trainer`]: per-fold training, evaluation, cross-validation and
//!   latency benchmarking.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod error;
pub mod features;
pub mod nnet;
mod spectral;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
