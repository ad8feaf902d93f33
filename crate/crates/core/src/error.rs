use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("participant {participant}: {reason}")]
    MissingStream { participant: String, reason: String },

    #[error("{stream}: corrupt frame at {location}: {reason}")]
    CorruptFrame {
        stream: String,
        location: String,
        reason: String,
    },

    #[error("{stream}: out-of-order timestamp at index {index} ({ts} after {prev})")]
    OutOfOrder {
        stream: String,
        index: usize,
        prev: u64,
        ts: u64,
    },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimension {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("degenerate pose problem: {0}")]
    Degenerate(String),

    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("non-finite residuals during refinement")]
    NonFinite,

    #[error("no landmarks")]
    NoLandmarks,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("histogram bin mismatch ({0} vs {1})")]
    BinMismatch(usize, usize),

    #[error("rejected command: {0}")]
    Command(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attributes an error to the pipeline module that raised it.
    pub fn in_module(self, module: &'static str) -> Self {
        match self {
            e @ Error::Module { .. } => e,
            e => Error::Module {
                module,
                source: Box::new(e),
            },
        }
    }
}
