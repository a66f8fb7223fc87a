use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("token id {token} out of range for vocab size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("empty sequence at index {0}")]
    EmptySequence(usize),

    #[error("invalid sparsity: {0}")]
    Sparsity(String),

    #[error("unknown metric: {0}")]
    UnknownMetric(String),

    #[error("missing activation stats for sub-module {0}")]
    MissingStats(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("invalid search parameters: {0}")]
    Search(String),

    #[error("gene {0} outside [0, 1)")]
    GeneOutOfRange(f64),

    #[error("divergence cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("bad magic: expected \"OPSH\"")]
    BadMagic,

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
