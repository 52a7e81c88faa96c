use thiserror::Error;

#[derive(Debug, Error)]
pub enum LbcError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("corrupt trajectory data: {0}")]
    DataCorruption(String),
    #[error("unsupported comparison: {0}")]
    Unsupported(String),
    #[error("worker failure: {0}")]
    Worker(String),
    #[error("buffer closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, LbcError>;

pub(crate) fn config_err(msg: impl Into<String>) -> LbcError {
    LbcError::Config(msg.into())
}
