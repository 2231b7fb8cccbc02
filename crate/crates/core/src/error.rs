use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time step {t} out of range 1..={max}")]
    TimeStepOutOfRange { t: u32, max: u32 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid time binning: {0}")]
    Binning(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("distillation cache does not match replay facts: {0}")]
    CacheMismatch(String),

    #[error("entity {0} is not among the ranking candidates")]
    MissingCandidate(u32),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported format version {found} in {what} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("corrupt {what}: {msg}")]
    Corrupt { what: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
