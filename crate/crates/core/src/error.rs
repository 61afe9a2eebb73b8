use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Image decode/encode failures.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),

    #[error("unsupported bit depth {0} (only 8-bit images are supported)")]
    UnsupportedBitDepth(u8),

    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unrecognized image format: {0}")]
    UnknownFormat(String),

    #[error("png codec error: {0}")]
    Png(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures of the line-delimited JSON captioner protocol.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("failed to spawn oracle `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("oracle timed out after {secs:.1}s waiting for ids {pending:?}")]
    Timeout { secs: f64, pending: Vec<String> },

    #[error("malformed JSON from oracle on line {line_no}: {reason}: {line}")]
    MalformedJson {
        line_no: usize,
        line: String,
        reason: String,
    },

    #[error("oracle answered unknown id on line {line_no}: {line}")]
    UnknownId { line_no: usize, line: String },

    #[error("oracle answered id twice on line {line_no}: {line}")]
    DuplicateId { line_no: usize, line: String },

    #[error("duplicate request id `{0}` in batch")]
    DuplicateRequest(String),

    #[error("oracle exited before answering ids {pending:?}")]
    Exited { pending: Vec<String> },

    #[error("oracle pipe error: {0}")]
    Pipe(#[source] std::io::Error),
}
