use std::path::PathBuf;

/// Errors surfaced by every module of the runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("incomplete archive: no payload for tensor `{0}`")]
    IncompleteArchive(String),

    #[error("not a feature cache: {}", .0.display())]
    NotACache(PathBuf),

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("workload failed on repeat {repeat}: {message}")]
    Workload { repeat: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
