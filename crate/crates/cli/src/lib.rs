//! Batch driver for the predictive state learning experiments.
//!
//! The binary exposes generic `generate`/`train`/`filter`/`evaluate`
//! commands plus `experiment` and `bounds` runners; this library holds their
//! implementations so integration tests can call them in process. All
//! outputs are plain CSV and JSON files stamped with the seed and the config
//! hash; rerunning a config reproduces every numeric artifact byte for
//! byte, while wall-clock timings are confined to `metadata.json`.

use std::fmt;

pub mod artifacts;
pub mod bkt;
pub mod boundsrun;
pub mod commands;
pub mod config;
pub mod convergence;
pub mod lasso;

/// Driver failure, split by which exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments: exit code 1.
    Config(String),
    /// Failure while executing a valid configuration: exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn config(e: impl fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
