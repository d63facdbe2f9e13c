use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to load view `{view}`: {reason}")]
    Load { view: String, reason: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("preprocessing failed: {0}")]
    Preprocess(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("non-finite loss at step {step} in term `{term}`")]
    NonFiniteLoss { step: u64, term: &'static str },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
