use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration is internally inconsistent (shape mismatches, bad presets).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be parsed; `line` is 1-based where applicable.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A loss component became NaN or infinite during training.
    #[error("non-finite value in component `{component}` at step {step}")]
    NonFinite { component: String, step: u64 },

    /// Files referenced by a manifest are missing on disk.
    #[error("missing image files:\n{}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))]
    MissingFiles(Vec<PathBuf>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
