use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("patch at ({origin_row}, {origin_col}) of size {size} exceeds {height}x{width} image")]
    OutOfBounds {
        origin_row: usize,
        origin_col: usize,
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("image {height}x{width} is smaller than required {size}x{size}")]
    TooSmall {
        height: usize,
        width: usize,
        size: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("not a JPEG stream")]
    NotAJpeg,
    #[error("JPEG stream has no luminance quantization table")]
    MissingTables,
    #[error("class `{class}` has {available} records, {required} required")]
    InsufficientData {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("format error: {0}")]
    Format(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
}
