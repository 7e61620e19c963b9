use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation (bad probabilities, non-PSD covariance, ...).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Matrix or feature dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A data file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// No usable rows remained after windowing or filtering.
    #[error("empty dataset: {0}")]
    Empty(String),

    /// A numerical routine failed (singular solve, non-convergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
