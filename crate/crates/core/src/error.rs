use thiserror::Error;

pub type Result<T, E = ProfsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ProfsError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty tuple set")]
    EmptyTupleSet,

    #[error("no representative in batch")]
    NoRepresentative,

    #[error("missing representative for class {0}")]
    MissingRepresentative(usize),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("class {label} has {size} samples but {needed} are required per batch")]
    ClassTooSmall { label: usize, size: usize, needed: usize },

    #[error("insufficient initialized cache entries: need {needed}, have {available}")]
    InsufficientCache { needed: usize, available: usize },

    #[error("no negative candidates in batch")]
    NoNegatives,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl ProfsError {
    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ProfsError::Config { .. }
                | ProfsError::Validation(_)
                | ProfsError::Parse { .. }
                | ProfsError::InvalidArgument(_)
                | ProfsError::ClassTooSmall { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ProfsError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        ProfsError::Config {
            key: key.to_string(),
            message: msg.into(),
        }
    }
}
