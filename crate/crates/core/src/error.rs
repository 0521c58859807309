use std::io;
use std::path::PathBuf;

use crate::record::RecordId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which side of a qrel a missing record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Corpus,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Query => f.write_str("query"),
            Side::Corpus => f.write_str("corpus"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("{path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid record id {0:?}: ids must be non-empty and contain no tabs or newlines")]
    InvalidId(String),

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("record {0} not found")]
    NotFound(RecordId),

    #[error("{side} record {id} referenced by qrels is missing from the {side} store")]
    MissingRecord { side: Side, id: RecordId },

    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("unknown qrel format {name:?}; registered formats: {known}")]
    UnknownFormat { name: String, known: String },

    #[error("unknown {kind} callback {name:?}; registered: {known}")]
    UnknownCallback {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("NaN score for query row {row}, batch column {col}")]
    NanScore { row: usize, col: usize },

    #[error("k must be at least 1")]
    InvalidK,

    #[error("top-k states are incompatible: {0}")]
    IncompatibleStates(String),

    #[error("shard weight at index {index} is not positive: {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },

    #[error("embedding cache {0} is absent or was never finalized")]
    CacheAbsent(PathBuf),

    #[error("document {doc} was scored for query {query} but has no judgment")]
    Unjudged { query: RecordId, doc: RecordId },
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the filesystem rather than by data content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::IoAt { .. } | Error::CacheAbsent(_))
    }
}
