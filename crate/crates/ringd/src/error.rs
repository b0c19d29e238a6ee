use std::io;

use thiserror::Error;

/// Failures of a bus operation, in-process or over the wire.
///
/// Each variant has a stable wire reason (see [`BusError::reason`]) so a
/// remote client reconstructs the same variant the server produced.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("channel {0} already exists")]
    DuplicateName(String),
    #[error("shape mismatch on {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("channel {0} is read-only")]
    ReadOnly(String),
    #[error("invalid channel name {0:?}")]
    BadName(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("channel {0} is already monitored on this connection")]
    AlreadyMonitored(String),
    #[error("channel {0} is not monitored")]
    NotMonitored(String),
    #[error("bus connection lost")]
    Disconnected,
    #[error("no answer from the bus")]
    Timeout,
    #[error("{0}")]
    Io(String),
}

impl BusError {
    pub fn reason(&self) -> &'static str {
        match self {
            BusError::UnknownChannel(_) => "unknown-channel",
            BusError::DuplicateName(_) => "duplicate-name",
            BusError::ShapeMismatch { .. } => "shape-mismatch",
            BusError::ReadOnly(_) => "read-only",
            BusError::BadName(_) => "bad-name",
            BusError::BadRequest(_) => "bad-request",
            BusError::AlreadyMonitored(_) => "already-monitored",
            BusError::NotMonitored(_) => "not-monitored",
            BusError::Disconnected => "disconnected",
            BusError::Timeout => "timeout",
            BusError::Io(_) => "io",
        }
    }

    /// Rebuilds an error from an `ERR <name|-> <reason>` frame.
    pub fn from_reason(name: Option<&str>, reason: &str) -> Self {
        let name = name.unwrap_or("-").to_owned();
        match reason {
            "unknown-channel" => BusError::UnknownChannel(name),
            "duplicate-name" => BusError::DuplicateName(name),
            "shape-mismatch" => BusError::ShapeMismatch { name, detail: "rejected by server".into() },
            "read-only" => BusError::ReadOnly(name),
            "bad-name" => BusError::BadName(name),
            "already-monitored" => BusError::AlreadyMonitored(name),
            "not-monitored" => BusError::NotMonitored(name),
            other => BusError::BadRequest(other.to_owned()),
        }
    }

    pub(crate) fn shape(name: &str, e: ringd_core::Error) -> Self {
        BusError::ShapeMismatch { name: name.to_owned(), detail: e.to_string() }
    }
}

impl From<io::Error> for BusError {
    fn from(e: io::Error) -> Self {
        BusError::Io(e.to_string())
    }
}

/// Errors of the services, file formats and tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Core(#[from] ringd_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("invalid state transition: {0}")]
    BadTransition(String),
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

/// A malformed line in a text file; `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
