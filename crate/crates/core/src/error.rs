use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("at least two chains required (got {0})")]
    TooFewChains(usize),

    #[error("ragged chains: chain {chain} has {len} iterations, expected {expected}")]
    RaggedChains {
        chain: usize,
        len: usize,
        expected: usize,
    },

    #[error("non-numeric cell at row {row}, column {column}: {value:?}")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("non-finite draw in chain {chain} at iteration {iteration}")]
    NonFinite { chain: usize, iteration: usize },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("chains of length {0} are too short (need at least {1})")]
    TooShort(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("degenerate quantile: indicator series at x = {0} is constant")]
    DegenerateQuantile(f64),

    #[error("empty evaluation grid")]
    EmptyGrid,

    #[error("R-infinity infinite or undefined: {0}")]
    UnboundedRInfinity(String),

    #[error("dimension {d} exceeds the direction cap {cap}; diagnose a scalar summary such as the log-posterior instead")]
    TooManyDirections { d: usize, cap: usize },

    #[error("{0} did not converge after {1} iterations")]
    NoConvergence(&'static str, usize),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
