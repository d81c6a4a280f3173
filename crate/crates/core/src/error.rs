use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: both strings are empty, no non-empty alignment exists")]
    DegenerateInput,

    #[error("no complete alignment path{}", .0.map(|s| format!(" in the {s} subset")).unwrap_or_default())]
    NoPath(Option<crate::model::Label>),

    #[error("unknown edit operation `{0}`")]
    UnknownOp(String),

    #[error("unknown input predicate `{0}`")]
    UnknownPredicate(String),

    #[error("model parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("unsupported model format_version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{path}: line {line}: {message}")]
    Data {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate record_id `{0}`")]
    DuplicateRecord(String),

    #[error("cannot split: {0}")]
    Split(String),

    #[error("numerical failure on pair `{pair_id}`: {message}")]
    Numerical { pair_id: String, message: String },

    #[error("inference failed on pair `{pair_id}`: {source}")]
    Pair {
        pair_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_pair(self, pair_id: &str) -> Self {
        match self {
            e @ (Error::Pair { .. } | Error::Numerical { .. }) => e,
            e => Error::Pair {
                pair_id: pair_id.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by non-finite arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } => true,
            Error::Pair { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
