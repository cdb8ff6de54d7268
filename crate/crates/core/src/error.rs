use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrsError>;

#[derive(Debug, Error)]
pub enum CrsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// The context mentions no entity, so no entity-level summary exists.
    #[error("empty preference history (cold start)")]
    ColdStart,

    #[error("distribution supports differ")]
    SupportMismatch,

    #[error("vocabulary item block does not match the catalog: {0}")]
    Misaligned(String),

    #[error("token id {id} is outside the vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("input of {len} tokens exceeds the backbone limit of {max}")]
    Overlength { len: usize, max: usize },

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),
}

impl CrsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CrsError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        CrsError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
