use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical state with NaN or infinite components reached the integrator.
    #[error("non-finite cartpole state: {0}")]
    NonFiniteState(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("game state error: {0}")]
    GameState(String),

    #[error("log line {line}: {message}")]
    LogParse { line: usize, message: String },

    #[error("unsupported log format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("out-of-order step index {got} (last written {last})")]
    OutOfOrder { got: u64, last: u64 },

    #[error("replay refused: {0}")]
    ReplayRefused(String),

    #[error("configuration is uncalibrated: {0}")]
    Uncalibrated(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoRaw(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
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
