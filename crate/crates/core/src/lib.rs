//! Masked ROI time-series transformer pipeline.
//!
//! A small, deterministic, CPU-only stack for self-supervised pre-training
//! (masked reconstruction of ROI time-series windows) and supervised
//! fine-tuning (binary classification on a frozen encoder), together with
//! the evaluation protocol used to compare masking strategies: nested
//! stratified cross-validation, sliding-window majority voting, ROC
//! analysis, and paired t-tests.
//!
//! Everything is built on a minimal reverse-mode autodiff tape over flat
//! f64 tensors ([`autodiff`]) so that training runs are bit-reproducible
//! from a seed on any platform.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod masking;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod training;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
