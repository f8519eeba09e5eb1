use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BetError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dataset too sparse: {0}")]
    TooSparse(String),

    #[error("no negatives available for user {user}")]
    NoNegatives { user: usize },

    #[error("budget infeasible: budget {budget} < {entities} entities (one parameter each)")]
    BudgetInfeasible { budget: u64, entities: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding size {size} out of range [1, {d_max}] at row {row}")]
    SizeOutOfRange { row: usize, size: u32, d_max: u32 },

    #[error("index {index} out of bounds (len {len})")]
    OutOfBounds { index: usize, len: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BetError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            BetError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
