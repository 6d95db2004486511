use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the factorization library.
#[derive(Debug, Error)]
pub enum BbfError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("input contains no data")]
    Empty,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("problem size {n} exceeds the dense cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("malformed factorization container: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, BbfError>;

pub(crate) fn invalid(msg: impl Into<String>) -> BbfError {
    BbfError::InvalidParameter(msg.into())
}
