use thiserror::Error;

/// Errors raised by the simulator, the learners and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed action: {0}")]
    Action(String),

    #[error("non-finite value during training: {0}")]
    Diverged(String),

    #[error("oracle action space too large: {size} joint actions (limit {limit})")]
    OracleTooLarge { size: u128, limit: u128 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
