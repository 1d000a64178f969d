use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("unknown manifest key `{0}`")]
    UnknownManifestKey(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("dimension mismatch in {file}: expected {expected} bytes, found {found}")]
    DimMismatch {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in tensor `{tensor}` at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("invalid fire mask value {value} at flat index {index}")]
    InvalidMask { value: u8, index: usize },

    #[error("invalid patch geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no negative patches available for balancing")]
    NoNegatives,

    #[error("patch set contains a single class")]
    SingleClass,

    #[error("strategy map missing for `{0}`")]
    MissingMap(String),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("insufficient samples: {0}")]
    Insufficient(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("sidecar format: {0}")]
    Sidecar(String),

    #[error("csv: {0}")]
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
