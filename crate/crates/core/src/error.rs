use std::path::PathBuf;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("selection policy error: {0}")]
    Policy(String),

    #[error("dataset format error in {path}: {reason}")]
    DataFormat { path: PathBuf, reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("epoch {epoch} batch {batch}: {source}")]
    Run {
        epoch: u64,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
