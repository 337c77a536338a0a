use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, the learning core and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A caller broke a structural contract (e.g. observing an untracked neighbor).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is out of range. `field` names the offending key.
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("failed to parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("export failed: {0}")]
    Export(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
