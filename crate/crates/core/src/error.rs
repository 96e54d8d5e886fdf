use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("empty neighborhood: no memory mass for this query")]
    EmptyNeighborhood,

    #[error("memory is empty")]
    EmptyMemory,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(&'static str),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error("slot {slot}: {source}")]
    InSlot {
        slot: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_slot(self, slot: usize) -> Self {
        Error::InSlot {
            slot,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
