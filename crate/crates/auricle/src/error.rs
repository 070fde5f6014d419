//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by dataset handling, statistics, training and decoding.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation failed for item '{id}': {msg}")]
    Validation { id: String, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing data for clip '{clip_id}': {msg}")]
    MissingData { clip_id: String, msg: String },

    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("tokenizer conflict: token '{0}' already present")]
    TokenConflict(String),

    #[error("tokenizer contract violated: {0}")]
    TokenizerContract(String),

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("upstream client error (request {request_id}): {msg}")]
    Upstream { request_id: String, msg: String },

    #[error("malformed span: {0}")]
    MalformedSpan(String),

    #[error("empty span at position {0}")]
    EmptySpan(usize),

    #[error("training aborted: {msg} (last good checkpoint: {last_good:?})")]
    TrainingAborted {
        msg: String,
        last_good: Option<PathBuf>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
