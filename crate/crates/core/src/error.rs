use std::io;

use thiserror::Error;

/// Errors raised anywhere in the occupancy pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("stale activation cache (cache generation {cache}, parameters generation {params})")]
    StaleCache { cache: u64, params: u64 },

    #[error("privacy contract violation: {0}")]
    Privacy(String),

    #[error("authentication failed: record was tampered with or the key is wrong")]
    Authentication,

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("crypto error: {0}")]
    Crypto(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Shape(_) | Error::Data(_) | Error::NoSignal(_) | Error::Malformed(_) => 3,
            Error::Io(_) => 3,
            Error::Numerical(_) | Error::StaleCache { .. } => 4,
            Error::Privacy(_) => 5,
            Error::Authentication | Error::Crypto(_) => 6,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Data(format!("wave file: {other}")),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}
