//! Error types shared across the engine.

use thiserror::Error;

use crate::backends::PortError;

/// Top-level error for engine entry points (sessions, replay, harness I/O).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Model(#[from] crate::model::ModelError),

    #[error(transparent)]
    Port(#[from] PortError),

    #[error(transparent)]
    Replay(#[from] crate::controller::ReplayError),

    /// The partial trace up to the failing step is preserved.
    #[error("session aborted at iteration {iteration}: {reason}")]
    SessionAborted {
        iteration: u32,
        reason: String,
        trace: Box<crate::controller::SessionTrace>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
