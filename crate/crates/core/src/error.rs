use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has zero norm")]
    ZeroRow(usize),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("label {label} in row {row} is outside [0, {classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("attribute pool is empty")]
    EmptyPool,

    #[error("duplicate attribute name {0:?}")]
    DuplicateName(String),

    #[error("cannot build {n} orthonormal rows in dimension {d}")]
    TooManyForOrthonormal { n: usize, d: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least 2 rows to fit a covariance, got {0}")]
    TooFewRows(usize),

    #[error("Cholesky factorization failed after {retries} ridge increases")]
    FactorizationFailed { retries: usize },

    #[error("requested k = {k} exceeds the {available} available")]
    KTooLarge { k: usize, available: usize },

    #[error("k = {k} must lie in [1, {cols}]")]
    BadK { k: usize, cols: usize },

    #[error("non-finite loss at epoch {epoch}")]
    DivergenceDetected { epoch: usize },

    #[error("class index {class} is out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("index {index} is out of range for length {len}")]
    BadIndex { index: usize, len: usize },

    #[error("class name is empty")]
    EmptyName,

    #[error("batch prompt needs at least 2 classes, got {0}")]
    TooFewClasses(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
