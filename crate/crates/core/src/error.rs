use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid location at index {index}")]
    InvalidLocation { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix not numerically SPD; increase nugget τ² (pivot at index {index}, value {value:e})")]
    NotSpd { index: usize, value: f64 },

    #[error("indefinite factor: D[{index}] = {value:e}")]
    IndefiniteFactor { index: usize, value: f64 },

    #[error("problem size {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("likelihood undefined on bracket")]
    UndefinedOnBracket,

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
