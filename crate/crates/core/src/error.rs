use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every module of the crate.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// data problems with 3 and run failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate case: {0}")]
    Degenerate(String),

    #[error("missing checkpoint `{id}` (expected at {path})")]
    MissingCheckpoint { id: String, path: PathBuf },

    #[error("label mapping error: {0}")]
    Mapping(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingCheckpoint { .. } | Error::Mapping(_) => 2,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Format(_)
            | Error::Image { .. }
            | Error::Io { .. }
            | Error::Json(_) => 3,
            _ => 4,
        }
    }
}
