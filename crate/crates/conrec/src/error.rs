//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    Shape(String),
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Dataset / file-format problems (manifests, PGM, checkpoints).
    Data(String),
    /// Numerically degenerate input (zero vectors, non-finite gradients, ...).
    Numeric(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
