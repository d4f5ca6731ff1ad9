use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operation requires a non-empty tensor")]
    EmptyTensor,

    #[error("invalid bounds: lo ({lo}) > hi ({hi})")]
    InvalidBounds { lo: f64, hi: f64 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    InvalidShape { len: usize, shape: Vec<usize> },

    #[error("non-finite gradient in tensor {tensor} at element {index}")]
    NonFiniteGradient { tensor: usize, index: usize },

    #[error("parameters diverged (non-finite value in tensor {tensor})")]
    DivergedState { tensor: usize },

    #[error("expected {expected} tensors, got {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX file: {0}")]
    TruncatedFile(String),

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),

    #[error("dataset file not found: {}", .0.display())]
    DatasetMissing(PathBuf),

    #[error("no records to summarize")]
    EmptyInput,

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed results file: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the `bench` CLI: 1 config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidFraction(_) => 1,
            Error::BadMagic { .. }
            | Error::TruncatedFile(_)
            | Error::CountMismatch { .. }
            | Error::DatasetMissing(_)
            | Error::InvalidLabel { .. } => 2,
            _ => 3,
        }
    }
}
