use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("empty retain set: cannot forget all {n} samples")]
    EmptyRetainSet { n: usize },

    #[error("forget index {index} out of range for dataset of size {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("forget indices must be strictly increasing (saw {prev} then {next})")]
    UnsortedIndices { prev: usize, next: usize },

    #[error("step-size constraint violated: eta = {eta} exceeds limit {limit}")]
    StepSize { eta: f64, limit: f64 },

    #[error("iterate diverged (non-finite) at step {step}")]
    Divergence { step: usize },

    #[error("subproblem not convex: eta = {eta} must be strictly below 1/L = {limit}")]
    SubproblemNotConvex { eta: f64, limit: f64 },

    #[error("proximal subproblem did not converge after {iterations} iterations (residual {residual:e}, tolerance {tolerance:e})")]
    ProxNotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("checkpoint/dataset mismatch: checkpoint fingerprint {checkpoint:#018x}, dataset fingerprint {dataset:#018x}")]
    CheckpointMismatch { checkpoint: u64, dataset: u64 },

    #[error("checkpoint step {step} does not match T - K = {expected}")]
    CheckpointStep { step: u64, expected: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("not a PL problem: {0}")]
    NotPl(&'static str),

    #[error("population distribution unavailable for problem {0}")]
    NoPopulation(String),

    #[error("unknown problem {0:?}")]
    UnknownProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
