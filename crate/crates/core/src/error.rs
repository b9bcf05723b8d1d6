use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("non-finite value in {context}")]
    Numeric { context: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("not enough items: need {needed}, got {got}")]
    Count { needed: usize, got: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported model spec: {0}")]
    Spec(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("run directory {path} is locked by another process ({holder}); remove the lock file if that run is gone")]
    Locked { path: PathBuf, holder: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }
}
