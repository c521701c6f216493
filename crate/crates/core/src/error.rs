use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    /// A dataset or model invariant does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient UGCs: {0}")]
    Insufficient(String),

    #[error("{0}")]
    Empty(String),

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(f64),

    #[error("adam step called without fresh gradients")]
    StaleGradients,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }

    /// True for errors caused by bad input (configs, files, shapes) rather than
    /// failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Invariant(_)
                | Error::Config { .. }
                | Error::Shape(_)
                | Error::Insufficient(_)
                | Error::Empty(_)
                | Error::Json(_)
        ) || matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
