use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no observations")]
    NoObservations,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Every component's responsibility mass fell below the prune threshold.
    #[error("statistics collapsed")]
    StatisticsCollapsed,

    #[error("component bookkeeping mismatch: expected {expected} statistics rows, found {found}")]
    ComponentMismatch { expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("map file: {0}")]
    Format(String),

    #[error("goal region unreachable from {0:?}")]
    Unreachable((usize, usize)),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by the input data rather than a bug or bad configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse(_)
                | Error::Format(_)
                | Error::NoObservations
                | Error::InvalidModel(_)
                | Error::Unreachable(_)
        )
    }
}
