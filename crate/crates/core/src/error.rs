use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MopError>;

#[derive(Debug, Error)]
pub enum MopError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("malformed file: {0}")]
    Format(String),

    /// A persisted model or feature file does not match the active configuration.
    #[error("model/config mismatch: {0}")]
    Mismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl MopError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MopError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        MopError::Format(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MopError::Mismatch(_) => 3,
            MopError::Numerical(_) => 4,
            _ => 2,
        }
    }
}
