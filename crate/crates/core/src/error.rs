use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched channel counts, dimensions or otherwise inconsistent settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the domain an operation is defined on (empty extents, undersized maps).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an API contract (non-scalar loss root, shape drift between branches).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error in {path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("network build error at layer {index}: {message}")]
    Build { index: usize, message: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss in micro-batch {0}")]
    NonFiniteLoss(usize),

    #[error("finite-difference oracle produced a non-finite value for `{0}`")]
    OracleFailure(String),

    #[error("missing parameter `{0}` in checkpoint")]
    MissingParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
