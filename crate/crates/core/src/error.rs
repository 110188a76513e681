use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"FODF\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated header: {0} bytes is too short for a FODF header")]
    TruncatedHeader(usize),

    #[error("unsupported FODF version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: usize },

    #[error("dims {dims:?} describe {expected} elements but data has {found}")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("non-finite element {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("class {0} has no rows")]
    MissingClass(usize),

    #[error("covariance of class {class} is not positive definite after shrinkage {shrinkage}")]
    SingularCovariance { class: usize, shrinkage: f64 },

    #[error("box ({x0},{y0},{x1},{y1}) is not inside a {width}x{height} image")]
    BoxOutOfBounds {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },

    #[error("batch statistics need at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("supervised contrastive loss is undefined: no anchor has a positive")]
    UndefinedLoss,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
