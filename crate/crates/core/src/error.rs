use thiserror::Error;

use crate::optimizer::TrainTrace;

#[derive(Debug, Error)]
pub enum RitzError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("Robin coefficient beta must be nonzero")]
    ZeroBeta,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular boundary system (determinant {determinant:e})")]
    SingularSystem { determinant: f64 },

    #[error("problem has no exact solution attached")]
    MissingExact,

    #[error("rank-deficient least-squares design ({rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        trace: Box<TrainTrace>,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RitzError>;

pub(crate) fn invalid(msg: impl Into<String>) -> RitzError {
    RitzError::InvalidArgument(msg.into())
}
