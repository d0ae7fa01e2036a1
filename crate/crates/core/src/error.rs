use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument value is outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor or image dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Filesystem or decode failure, with the path that caused it.
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    /// Flat config file rejected a line.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// Checkpoint file is missing, malformed, or of an incompatible version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A loss became non-finite during training.
    #[error("training fault at iteration {iteration}: loss `{name}` = {value}")]
    Train {
        iteration: u64,
        name: String,
        value: f64,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
