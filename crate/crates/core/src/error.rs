use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("record {id} has no {kind} target")]
    MissingTarget { id: u64, kind: &'static str },

    #[error("target record {id} has no pseudo label")]
    MissingPseudo { id: u64 },

    #[error("dataset has no source records")]
    EmptySource,

    #[error("neighbor repository is empty")]
    EmptyRepository,

    #[error("epoch {epoch} outside schedule 1..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("stale {level} thresholds: computed at epoch {computed}, current epoch {current}")]
    StaleThresholds {
        level: &'static str,
        computed: usize,
        current: usize,
    },

    #[error("invalid label space: {0}")]
    LabelSpace(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: u64,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } | Error::LabelSpace(_) => 3,
            Error::ConfigInvalid(_) => 2,
            _ => 4,
        }
    }
}
