use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid convex body: {0}")]
    InvalidBody(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated in {op}: {message}")]
    Precondition { op: &'static str, message: String },

    /// Configuration problem, naming the offending field.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn pre(op: &'static str, message: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Json(_))
    }
}
