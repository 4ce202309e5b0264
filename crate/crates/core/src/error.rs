use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched dimensions or otherwise malformed arguments.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric input outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values produced while evaluating the distance model.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("problem generation failed: {0}")]
    Generation(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
