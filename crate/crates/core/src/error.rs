use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid joint state")]
    InvalidJointState,
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("simulation diverged")]
    SimulationDiverged,
    #[error("degenerate segment")]
    DegenerateSegment,
    #[error("swing angle undefined: discharge unit tip coincides with the TCP")]
    ZeroLengthSwing,
    #[error("pendulum length must be positive, got {0}")]
    InvalidLength(f64),
    #[error("singular IK; increase damping")]
    SingularIk,
    #[error("invalid residual action: {0}")]
    InvalidAction(String),
    #[error("episode finished")]
    EpisodeFinished,
    #[error("reset failed: start pose unreachable after {attempts} attempts")]
    ResetFailed { attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
