//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix entry at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("value {0} is not finite")]
    NonFiniteValue(f64),

    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,

    #[error("singular value decomposition did not converge")]
    SvdFailed,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("image must be square for denoising, got {width}x{height}")]
    NonSquareImage { width: usize, height: usize },

    #[error("column {index} has near-zero norm and cannot be normalized")]
    ZeroColumn { index: usize },

    #[error("test vector has near-zero norm")]
    ZeroVector,

    #[error("pixel value {value} at ({row}, {col}) is outside [0, 1]")]
    PixelOutOfRange { row: usize, col: usize, value: f64 },

    #[error("failed to decode image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("failed to parse matrix text at line {line}: {message}")]
    MatrixParse { line: usize, message: String },

    #[error("failed to parse manifest {path} at row {row}: {message}")]
    ManifestParse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("config fingerprint mismatch: model has {model}, evaluation config has {eval}")]
    FingerprintMismatch { model: String, eval: String },

    #[error("no glyph defined for class {0:?}")]
    UnknownGlyph(String),

    #[error("manifest has no {split} entries")]
    EmptySplit { split: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
