use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Wrong shape of a record: column counts, truncated documents.
    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    /// Non-finite or otherwise unusable numeric content.
    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("incompatible schema version {found} (supported up to {supported})")]
    Compatibility { found: u32, supported: u32 },
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// Innermost error when wrapped with row context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Row { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
