use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Env(#[from] entsim_core::Error),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("action outside the head's support: {0}")]
    Support(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LearnerError>;
