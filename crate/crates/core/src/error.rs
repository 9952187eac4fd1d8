//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A JSONL line failed to parse. Line numbers are 1-based and include the header.
    #[error("parse error at line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    /// A record violates the dataset schema (dimensions, label range, non-finite values).
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// Referential integrity failure: duplicate or unknown sample id.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// An operation was called with invalid arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A decay configuration is inconsistent with the checkpoint store.
    #[error("configuration error: {0}")]
    Config(String),

    /// A persisted file is not in the expected on-disk format.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Filesystem failure while reading or writing artifacts.
    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Template rendering was asked for a text field the sample does not carry.
    #[error("template error: missing slot \"{0}\"")]
    MissingSlot(String),

    /// A discriminative answer fell outside the template's closed lexicon.
    #[error("validation error: answer \"{answer}\" not in lexicon {lexicon:?}")]
    AnswerOutsideLexicon { answer: String, lexicon: Vec<String> },

    /// The leave-one-out oracle refused to retrain more models than its cap allows.
    #[error(
        "leave-one-out refused: {n} samples exceed the retraining cap of {cap}; \
         pass an explicit cap to override"
    )]
    LooCapExceeded { n: usize, cap: usize },
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
