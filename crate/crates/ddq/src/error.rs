//! Crate-wide error type.

use std::fmt;

use crate::protocol::ProtocolError;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration: bad layer chain, non-positive dimensions, ...
    Config(String),
    /// Caller violated an operation precondition (empty minibatch, stepping a
    /// terminal environment, sampling an empty buffer).
    Usage(String),
    /// Tensor shapes do not line up.
    Shape(String),
    /// A gradient or parameter contained NaN/Inf.
    NonFinite(String),
    Protocol(ProtocolError),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Protocol(e) => write!(f, "protocol error: {e}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Protocol(e) => Some(e),
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ProtocolError> for Error {
    fn from(e: ProtocolError) -> Self {
        Error::Protocol(e)
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
