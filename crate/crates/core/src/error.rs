use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot fit model: {0}")]
    Fit(String),

    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible corpus spec: {0}")]
    Spec(String),

    #[error("unsupported model schema version {found} (this build reads {expected})")]
    SchemaVersion { found: i64, expected: i64 },

    #[error("model artifact is corrupt: {0}")]
    Integrity(String),

    #[error("no trained model is available")]
    NoModel,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Config(_) | Error::Spec(_)
        )
    }
}
