//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, sampling, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A data file or in-memory dataset violates its invariants.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numerical operation failed (non-SPD matrix, non-finite likelihood, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
