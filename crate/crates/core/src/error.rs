//! Error type shared by every module in the core crate.

use alloc::string::String;
use core::fmt;

/// Failure categories surfaced by the core APIs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes or dimensions are incompatible with the operation.
    Dim(String),
    /// An input value violates the operation's preconditions.
    Input(String),
    /// A model or module configuration is invalid.
    Config(String),
    /// The API was called in a way its contract forbids.
    Usage(String),
    /// A byte stream does not decode as the expected format.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(msg) => write!(f, "dimension error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
