//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
///
/// Variants map onto the stable CLI exit-code contract:
/// usage/format/config errors exit 2, shape mismatches exit 3,
/// numeric divergence exits 4, verification failures exit 5.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix or vector shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Numeric failure: divergence, non-convergence, non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file contents; `offset` is the byte position of the
    /// offending field.
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Structurally valid file carrying invalid data (e.g. NaN payload).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
