use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed representation dump: {0}")]
    MalformedDump(String),

    #[error("datastore has no entries")]
    EmptyDatastore,

    #[error("incompatible stores: {0}")]
    IncompatibleStores(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("requested {requested} neighbors but only {available} entries are stored")]
    InsufficientEntries { requested: usize, available: usize },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("retrieval returned no neighbors")]
    EmptyRetrieval,

    #[error("untrained model: {0}")]
    Untrained(&'static str),

    #[error("no aligned training pairs found")]
    EmptyPairs,

    #[error("singular linear system (try a positive ridge)")]
    Singular,

    #[error("no shared sentences between {0} and {1}")]
    NoOverlap(String, String),

    #[error("incomplete score table: missing {0}")]
    IncompleteTable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined reference at line {0}: reference is empty")]
    UndefinedReference(usize),

    #[error("score scale mismatch")]
    ScaleMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by two inputs that do not fit together
    /// (dimension or store mismatches) rather than by a bad single input.
    pub fn is_incompatibility(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. } | Error::IncompatibleStores(_) | Error::ScaleMismatch
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
