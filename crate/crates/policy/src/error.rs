use thiserror::Error;

pub type Result<T, E = PolicyError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in update (epoch {epoch}); update aborted")]
    NonFiniteLoss { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] crane_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
