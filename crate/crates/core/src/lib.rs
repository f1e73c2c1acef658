//! Letter recognition from a 13-channel sensor pen.
//!
//! The crate covers the whole offline pipeline:
//!
//! - [`ingest`] parses session recordings (sensor stream + prompt labels) and
//!   splits them into per-letter samples.
//! - [`preprocess`] turns a raw letter into a fixed 50×13 normalized tensor.
//! - [`synth`] generates synthetic writers and sessions so experiments can run
//!   without a recorded corpus.
//! - [`nn`] is a small from-scratch 1D CNN engine (forward, backprop, Adam).
//! - [`eval`] implements writer-dependent and writer-independent protocols.
//! - [`dataset`] and [`config`] hold on-disk formats and run provenance.
//! - [`cli`] is the `penhwr` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod ingest;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod synth;

pub use ingest::{LabelInterval, LetterCase, LetterSample, SensorFrame};
pub use preprocess::{PreprocessConfig, TensorSample};

/// Number of letter classes per case.
pub const NUM_CLASSES: usize = 26;
/// Number of sensor channels per frame.
pub const NUM_CHANNELS: usize = 13;

/// Version string embedded into every artifact.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
