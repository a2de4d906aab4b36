use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rotation range {range} rad must be non-negative and below the critical tilt {critical} rad")]
    RotationRange { range: f64, critical: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("episode is done; call reset before stepping again")]
    EpisodeDone,

    #[error("forward cache does not match this network")]
    StaleCache,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("run aborted: {0}")]
    RunAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
