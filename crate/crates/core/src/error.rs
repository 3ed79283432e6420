use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point index {index} outside domain of size {size}")]
    OutOfDomain { index: usize, size: usize },

    #[error("factorization failed after jitter {jitter:e} (diagonal range {min_diag:e}..{max_diag:e})")]
    Factorization {
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate point (first seen on line {first})")]
    DuplicatePoint { line: usize, first: usize },

    #[error("line {line}: non-finite value in column `{column}`")]
    NonFinite { line: usize, column: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no fixed point found below cap {cap:e}")]
    Diverged { cap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
