use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Core(#[from] truvar::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Trace { path: PathBuf, message: String },

    #[error("checkpoints do not line up: {0}")]
    Alignment(String),

    #[error("{failed} of {total} runs failed; first: {first}")]
    RunsFailed {
        failed: usize,
        total: usize,
        first: Box<CliError>,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 configuration, 3 numerical failure, 4 infeasible bound, 1 other.
    pub fn exit_code(&self) -> i32 {
        use truvar::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(e) => match e {
                E::Config(_)
                | E::DimensionMismatch { .. }
                | E::OutOfDomain { .. }
                | E::Parse { .. }
                | E::DuplicatePoint { .. }
                | E::NonFinite { .. } => 2,
                E::Factorization { .. } | E::Numerical(_) => 3,
                E::Infeasible(_) | E::Diverged { .. } => 4,
                E::Io(_) | E::Csv(_) => 1,
            },
            CliError::RunsFailed { first, .. } => first.exit_code(),
            CliError::Io { .. } | CliError::Trace { .. } | CliError::Alignment(_) => 1,
        }
    }
}
