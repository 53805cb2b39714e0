use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside the domain of the function")]
    Domain { name: &'static str, value: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("series cutoff {cutoff} too small for rate {rate} (need at least {required})")]
    InsufficientCutoff { cutoff: usize, rate: f64, required: usize },

    #[error("nonfinite {component} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },

    #[error("bad magic in {path}: not a {expected} file")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported {kind} version {version}")]
    BadVersion { kind: &'static str, version: u32 },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("CRC mismatch in {path}: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("malformed CSV: {0}")]
    MalformedCsv(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
