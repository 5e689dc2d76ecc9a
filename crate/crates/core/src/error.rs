use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not parse configuration: {0}")]
    Parse(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("logic error: {0}")]
    Logic(String),

    #[error("infeasible frame: {0}")]
    InfeasibleFrame(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("interface error: {0}")]
    Interface(String),

    #[error("causality violation: {0}")]
    Causality(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
