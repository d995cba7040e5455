use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ids, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Binary container could not be decoded.
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// Wire-level inconsistency between communicating workers.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("row {row} alone encodes to {bytes} bytes, above the {limit}-byte message limit")]
    RowTooLarge {
        row: u32,
        bytes: usize,
        limit: usize,
    },

    #[error("channel request rejected: {0}")]
    Rejected(String),

    #[error("object not found: {bucket}/{key}")]
    NotFound { bucket: String, key: String },

    #[error("infeasible partition: {0}")]
    Infeasible(String),

    #[error("worker {worker} timed out in layer {layer} waiting for sources {missing:?}")]
    Timeout {
        worker: u32,
        layer: u32,
        missing: Vec<u32>,
    },

    #[error("worker {worker} aborted because another worker failed")]
    Aborted { worker: u32 },

    /// Failure inside a worker, tagged with where it happened.
    #[error("worker {worker} failed in layer {layer}: {source}")]
    Worker {
        worker: u32,
        layer: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
