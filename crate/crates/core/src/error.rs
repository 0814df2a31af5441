use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the orchestration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("round {round} outside 1..={horizon}")]
    InvalidRound { round: usize, horizon: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("at least 2 seeds are required for aggregation, got {0}")]
    InsufficientSeeds(usize),

    #[error("check failed to evaluate: {0}")]
    Check(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
