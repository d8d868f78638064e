//! Crate-wide error type.
//!
//! Variants map onto the CLI exit-code contract: `Validation` -> 1,
//! `Io`/`Format` -> 2, `Numerical` -> 3.

use std::path::PathBuf;
use thiserror::Error;

use crate::autodiff::AdError;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or input that violates a documented contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// Underlying filesystem failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse or violate invariants.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// NaN/Inf or other numerical failure during computation.
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Stable process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

impl From<AdError> for Error {
    fn from(e: AdError) -> Self {
        match e {
            AdError::NonFinite(msg) => Error::Numerical(msg),
            other => Error::Validation(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
