use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants fall in two families that the CLI maps onto exit codes:
/// contract violations (exit 1) and format/IO problems (exit 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error in {path}: field `{field}`: {msg}")]
    Config {
        path: String,
        field: String,
        msg: String,
    },

    #[error("non-finite loss at example {index} (loss = {loss})")]
    NonFinite { index: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 for contract violations, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::NonFinite { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
