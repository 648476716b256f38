//! Self-supervised first-order meta-learning for automatic sleep staging.
//!
//! The crate covers the whole pipeline: EDF ingestion ([`edf`]), signal
//! preprocessing and real-FFT primitives ([`signal`]), a small reverse-mode
//! differentiation core ([`diff`]), the dual-branch convolutional scorer
//! ([`sleepnet`]), per-subject task sampling with the PhaseSwap pretext task
//! ([`tasks`]), the three training procedures ([`meta`]) and the evaluation
//! harness ([`eval`]). [`config`] holds the TOML run configuration and
//! [`gradsuite`] the finite-difference suite.
//!
//! Data-parallel loops (per-sample gradients, preprocessing, experiment cells)
//! run on rayon when the `parallel` feature is enabled. Every reduction is
//! performed in a fixed order, so results are bitwise identical with and
//! without the feature.

pub mod config;
pub mod diff;
pub mod edf;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradsuite;
pub mod meta;
pub mod signal;
pub mod sleepnet;
pub mod tasks;

pub use error::{Error, Result};
pub use exec::Exec;
