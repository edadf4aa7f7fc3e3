use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the user model, corpus pipeline and session machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} not found: {id}")]
    NotFound { what: &'static str, id: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("posterior precision matrix is not positive definite")]
    SingularModel,

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("no terms survive document-frequency thresholds [{min_df}, {max_df}]")]
    EmptyVocabulary { min_df: f64, max_df: f64 },

    #[error("document slice is empty")]
    EmptySlice,

    #[error("query matched no documents")]
    NoResults,

    #[error("group {group} has {found} messages, {wanted} required")]
    InsufficientData {
        group: String,
        found: usize,
        wanted: usize,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl Error {
    pub(crate) fn not_found(what: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            what,
            id: id.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
