use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error(transparent)]
    Grad(#[from] gradcore::GradError),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid road network: {0}")]
    InvalidNetwork(String),

    #[error("unknown road id {0}")]
    UnknownRoad(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing text embedding for key `{0}`")]
    MissingEmbedding(String),

    #[error("remote embedding request failed{}: {msg}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Remote { status: Option<u16>, msg: String },

    #[error("insufficient test pool: need at least {required}, have {available}")]
    InsufficientPool { required: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
