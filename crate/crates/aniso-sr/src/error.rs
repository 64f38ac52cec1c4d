//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not match its declared format; names the offending field.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Dimension or element-count disagreement (payload vs header, crop vs volume, ...).
    #[error("size error: {0}")]
    Size(String),

    /// Tensor or slice shapes incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input degenerate for the operation (constant volume, all-zero differences, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An API contract was violated (backward on a non-scalar, missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Serialized weights do not match the architecture trying to load them.
    #[error("incompatible weights: {0}")]
    Incompatible(String),

    /// Weight payload failed its integrity check.
    #[error("checksum mismatch: {0}")]
    Checksum(String),

    /// Invalid configuration (empty training set, bad option combination, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss; carries the step at which it happened.
    #[error("numerical abort at step {step}: {detail}")]
    Numerical { step: u64, detail: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
