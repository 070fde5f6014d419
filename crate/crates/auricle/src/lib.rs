//! Auditory-knowledge benchmarks and imagination-augmented decoding.
//!
//! The crate has three layers:
//!
//! - benchmark construction and scoring: [`bench`], [`builder`], [`eval`]
//! - model substrate: [`tinylm`] (a small decoder-only LM with gradient
//!   support), [`trainer`] (two-stage fine-tuning) and [`imagine`] (the
//!   pause/encode/inject decoding loop)
//! - operator surface: [`config`] and the `auricle` binary
//!
//! Datasets are JSONL files of [`bench::QAItem`]; training data is JSONL of
//! [`spanprep::ImaginationExample`]; checkpoints and manifests are JSON.

pub mod bench;
pub mod builder;
pub mod client;
pub mod config;
pub mod error;
pub mod eval;
pub mod imagine;
pub mod manifest;
pub mod pitchworld;
pub mod spanprep;
pub mod tinylm;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
