use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the monitoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("raw sequence format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid scene script: {0}")]
    InvalidScript(String),

    #[error("singular homography (determinant {0:e})")]
    SingularHomography(f64),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stream out of order: frame {found} after {previous}")]
    StreamOrder { previous: u64, found: u64 },

    #[error("streams out of sync: {0}")]
    StreamDesync(String),

    #[error("insufficient degrees of freedom: {0}")]
    DegreesOfFreedom(String),

    #[error("model state blob: {0}")]
    ModelState(String),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Config {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
