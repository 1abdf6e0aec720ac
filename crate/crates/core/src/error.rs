//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor or matrix shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid argument value (ratios, probabilities, sizes).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Bad usage of the autodiff tape (non-scalar loss, foreign ids).
    #[error("autodiff usage error: {0}")]
    Autodiff(String),

    /// Dataset problems: manifests, series files, short subjects.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint and other on-disk format problems.
    #[error("format error: {0}")]
    Format(String),

    /// Metric is undefined on the given input (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A training input overlapped the held-out test set.
    #[error("leakage guard: {0}")]
    Leakage(String),

    /// Experiment configuration rejected before any work started.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
