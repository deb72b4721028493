//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced while loading or validating data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed row at line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },

    #[error("empty graph after filtering")]
    EmptyGraph,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing label `{label}` for observation {index}")]
    MissingLabel { label: String, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown sector `{0}`")]
    UnknownSector(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
