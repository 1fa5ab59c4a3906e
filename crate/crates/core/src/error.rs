use thiserror::Error;

#[derive(Debug, Error)]
pub enum DockingError {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario or trajectory file could not be parsed.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DockingError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(DockingError::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(DockingError::Config(msg.into()))
}
