//! Crate-wide error type for fallible, recoverable operations.
//!
//! Structural misuse (index out of range, inconsistent shapes) panics
//! instead; this type covers I/O, parsing, and training failures that a
//! caller can reasonably report or handle.

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    Io(io::Error),
    /// Malformed text input; `line` is 1-based.
    Parse {
        line: usize,
        msg: String,
    },
    /// Bad configuration key or value.
    Config(String),
    /// Unreadable or incompatible checkpoint file.
    Checkpoint(String),
    /// Training aborted; the last good checkpoint, if any, is referenced
    /// in the message.
    Train(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
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

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
