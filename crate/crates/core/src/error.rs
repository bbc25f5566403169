use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, AfdError>;

#[derive(Debug, Error)]
pub enum AfdError {
    /// A configuration field holds a value the rest of the pipeline cannot use.
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    /// Tensor shapes do not line up.
    #[error("shape mismatch in {context}: {message}")]
    Shape { context: String, message: String },

    /// Dataset files are missing or malformed.
    #[error("dataset ingestion failed for {path:?}: {message}")]
    Ingest { path: PathBuf, message: String },

    /// A loss or activation went non-finite.
    #[error("non-finite value in {context} at epoch {epoch}")]
    Numeric { context: String, epoch: u32 },

    /// Degenerate input (empty tensor, zero spatial extent).
    #[error("degenerate input in {0}")]
    Degenerate(String),

    #[error("checkpoint error at {path:?}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AfdError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        AfdError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn shape(context: impl Into<String>, message: impl Into<String>) -> Self {
        AfdError::Shape {
            context: context.into(),
            message: message.into(),
        }
    }
}
