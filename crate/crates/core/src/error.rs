use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("design construction failed: {0}")]
    Construction(String),

    #[error("item index {index} out of range for v = {v}")]
    IndexOutOfRange { index: usize, v: usize },

    #[error("invalid ranking: {0}")]
    InvalidRanking(String),

    #[error("missing relevance for item {0}")]
    MissingRelevance(String),

    #[error("ground-truth order required for second-order coverage")]
    MissingGroundTruth,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameters(msg.into())
}
