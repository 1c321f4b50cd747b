use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants split into two families: I/O failures (the filesystem said no)
/// and validation failures (the data or configuration is inconsistent).
/// The CLI maps them to exit codes 2 and 1 respectively.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("size mismatch in {path}: expected {expected} bytes, found {found}")]
    SizeMismatch { path: PathBuf, expected: u64, found: u64 },

    #[error("non-finite value in {array} at flat index {index}")]
    NonFinite { array: String, index: usize },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("malformed JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{layer}` has kind {kind}, which cannot provide {requested}")]
    KindMismatch {
        layer: String,
        kind: String,
        requested: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("layout mismatch between monitor and store: {0}")]
    LayoutMismatch(String),

    #[error("class {0} has no bounding boxes")]
    EmptyClass(usize),

    #[error("unknown cluster {cluster} for class {class}")]
    UnknownCluster { class: usize, cluster: usize },

    #[error("invalid monitor: {0}")]
    InvalidMonitor(String),

    #[error("store has no {0}")]
    MissingArray(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingFile(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
