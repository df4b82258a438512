//! CLI-level errors and their process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at row {row}, column {col}: {reason}")]
    Parse { row: usize, col: usize, reason: String },

    #[error("ragged rows: row {row} has {found} fields, expected {expected}")]
    RaggedRows { row: usize, found: usize, expected: usize },

    #[error("trial-sum mismatch at row {row}: counts sum to {sum}, expected {expected}")]
    TrialSumMismatch { row: usize, sum: f64, expected: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{failed} of {total} replications failed (limit 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] gsf_core::Error),

    #[error("invalid JSON in {path}: {reason}")]
    Json { path: String, reason: String },
}

/// Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
pub fn exit_code(err: &CliError) -> i32 {
    use gsf_core::Error as E;
    match err {
        CliError::Parse { .. }
        | CliError::RaggedRows { .. }
        | CliError::TrialSumMismatch { .. }
        | CliError::Io { .. }
        | CliError::Json { .. } => 2,
        CliError::Usage(_) => 1,
        CliError::TooManyFailures { .. } => 3,
        CliError::Core(core) => match core {
            E::LineSearchDiverged { .. }
            | E::DegenerateCovariance { .. }
            | E::AllZeroLikelihood { .. } => 3,
            E::WeightSum { .. }
            | E::NegativeWeight { .. }
            | E::DimensionMismatch { .. }
            | E::InvalidAtom { .. }
            | E::InvalidObservation { .. }
            | E::UnknownModel { .. } => 2,
            _ => 1,
        },
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
