//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mixing weights sum to {sum} (expected 1 within {tol})")]
    WeightSum { sum: f64, tol: f64 },

    #[error("negative mixing weight {weight} at component {index}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid atom: {reason}")]
    InvalidAtom { reason: String },

    #[error("invalid observation: {reason}")]
    InvalidObservation { reason: String },

    #[error("non-positive weight {weight} passed to proportion penalty")]
    NonPositiveWeight { weight: f64 },

    #[error("preliminary-fit difference norm at index {index} is exactly zero")]
    ZeroTildeNorm { index: usize },

    #[error("covariance update degenerate: eigenvalue floor engaged on {floored} of {dim} eigenvalues")]
    DegenerateCovariance { floored: usize, dim: usize },

    #[error("all components underflow for observation {row}")]
    AllZeroLikelihood { row: usize },

    #[error("unknown simulation model id `{id}`")]
    UnknownModel { id: String },

    #[error("line search diverged: step bound exceeded {cap}")]
    LineSearchDiverged { cap: f64 },

    #[error("invalid grid: lambda_max {lambda_max} <= lambda_min {lambda_min}")]
    InvalidGrid { lambda_min: f64, lambda_max: f64 },

    #[error("regularization path contains no records")]
    EmptyPath,

    #[error("invalid partition: {reason}")]
    InvalidPartition { reason: String },

    #[error("unsupported Wasserstein order {order} (only 1 and 2)")]
    UnsupportedOrder { order: u32 },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
