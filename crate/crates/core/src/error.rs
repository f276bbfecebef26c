use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rejection sampler exceeded {limit} iterations (m={dim}, kappa={kappa})")]
    IterationLimit { limit: usize, dim: usize, kappa: f64 },

    #[error("antipodal endpoints: the great-circle path is not unique")]
    Antipodal,

    #[error("metric is numerically singular (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("integration diverged: {0}")]
    Divergence(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mask has no relevant pixels")]
    NoRelevantPixels,

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
