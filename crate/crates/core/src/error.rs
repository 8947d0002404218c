use std::path::PathBuf;

use thiserror::Error;

use crate::optimizer::TraceRow;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A precondition of the callee was not met by the caller (e.g. CMD on unbounded support).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    /// The optimization produced a non-finite loss. `trace` holds every row recorded before it.
    #[error("optimization diverged at iteration {iteration}: {detail}")]
    Diverged {
        iteration: usize,
        detail: String,
        trace: Vec<TraceRow>,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
