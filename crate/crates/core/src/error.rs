//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument violated a precondition. `field` names the
    /// offending parameter so CLI errors stay machine-parseable.
    #[error("invalid {field}: {message}")]
    InvalidArg { field: &'static str, message: String },

    /// A gather/checkpoint file failed structural validation.
    #[error("format error in {field}: {message}")]
    Format { field: &'static str, message: String },

    /// Two gathers that must share geometry do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model error: {0}")]
    Model(String),

    /// Training aborted on a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArg { field, message: message.into() }
    }

    pub fn format(field: &'static str, message: impl Into<String>) -> Self {
        Error::Format { field, message: message.into() }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
