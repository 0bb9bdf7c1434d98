use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("format error at `{path}`: {message}")]
    Format { path: String, message: String },

    /// Training produced a non-finite loss. `last_finite_epoch` is 0 when the
    /// very first epoch already diverged.
    #[error("training diverged in epoch {epoch} (last finite epoch {last_finite_epoch})")]
    Training {
        epoch: usize,
        last_finite_epoch: usize,
    },

    #[error("method `{method}` failed in epoch {epoch}: {message}")]
    Method {
        method: String,
        epoch: usize,
        message: String,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },

    #[error("{0} already exists")]
    Duplicate(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code used by the HTTP and CLI layers.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Argument(_) => "invalid_argument",
            Error::Numeric(_) => "numeric",
            Error::Partition(_) => "partition",
            Error::Format { .. } => "format",
            Error::Training { .. } => "training_diverged",
            Error::Method { .. } => "method_failed",
            Error::Metric(_) => "metric",
            Error::UndefinedSimilarity(_) => "undefined_similarity",
            Error::NotFound { .. } => "not_found",
            Error::Duplicate(_) => "duplicate",
            Error::Io { .. } => "io",
        }
    }

    pub fn field_path(&self) -> Option<&str> {
        match self {
            Error::Format { path, .. } => Some(path),
            _ => None,
        }
    }
}
