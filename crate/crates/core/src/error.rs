use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this graph")]
    ForeignVar,
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("empty partition: {0}")]
    EmptyPartition(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("world mismatch: {0}")]
    WorldMismatch(String),
    #[error("digest mismatch for {what}: expected {expected}, found {found}")]
    DigestMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("only one class present: {0}")]
    SingleClass(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
