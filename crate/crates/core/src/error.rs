use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("similarity matrix is singular ({size}x{size}); coincident points were not deduplicated or the configuration is degenerate")]
    SingularSimilarity { size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
