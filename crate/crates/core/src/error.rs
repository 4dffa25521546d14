use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("softmax over an all-masked vector")]
    AllMasked,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("id {id} out of range (limit {limit})")]
    IdOutOfRange { id: usize, limit: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("too few pairs: need at least {required}, have {available}")]
    TooFewPairs { required: usize, available: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("bad checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary is {found}")]
    VocabHash { expected: String, found: String },
    #[error("non-finite loss in batch with ids {ids:?}")]
    NonFiniteLoss { ids: Vec<u64> },
    #[error("embedding is zero-flagged (no in-vocabulary tokens)")]
    ZeroEmbedding,
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::AllMasked => "all-masked",
            Error::NonFinite(_) => "non-finite",
            Error::IdOutOfRange { .. } => "id-range",
            Error::InvalidInput(_) => "invalid-input",
            Error::TooFewPairs { .. } => "too-few-pairs",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Truncated(_) => "truncated",
            Error::VocabHash { .. } => "vocab-hash",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::ZeroEmbedding => "zero-embedding",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
