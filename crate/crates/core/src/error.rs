use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DdlError>;

#[derive(Debug, Error)]
pub enum DdlError {
    #[error("io error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value at ({row},{col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("zero dictionary: spectral norm is 0")]
    ZeroDictionary,

    #[error("empty test set")]
    EmptyTestSet,
}

impl DdlError {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        DdlError::Io {
            path: path.into(),
            cause,
        }
    }
}
