//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimation, sampling, and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a precondition (non-finite values, bad shapes, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two arguments disagree on dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A point lies outside the domain of the requested quantity.
    #[error("domain error: {0}")]
    Domain(String),

    /// A naive tensor evaluation would exceed its size guard.
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    /// A numerical routine failed to reach its contract (LP infeasible,
    /// iteration cap, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
