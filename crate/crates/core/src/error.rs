use thiserror::Error;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum MleError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("malformed packet: {0}")]
    MalformedPacket(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MleError>;
