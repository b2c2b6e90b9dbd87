use std::path::PathBuf;

/// Errors produced by grid data handling, codecs and mask generation.
#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value at day {day}, row {row}, col {col}")]
    NonFinite { day: usize, row: usize, col: usize },

    #[error("mask bit outside master at day {day}, row {row}, col {col}")]
    MaskOutsideMaster { day: usize, row: usize, col: usize },

    #[error("decode error in {path}: {field}: {detail}")]
    Decode {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("site (day {day}, row {row}, col {col}) is outside the master mask")]
    SiteOutsideMaster { day: usize, row: usize, col: usize },

    #[error("cylinder window [{start}, {end}] exceeds dataset length {days}")]
    WindowOutOfRange { start: usize, end: usize, days: usize },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("skew moves row {row} content off the canvas")]
    SkewOffCanvas { row: usize },

    #[error("dimensions {width}x{height} not divisible by factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("mask generation: target missing fraction {target} already exceeded (existing {existing})")]
    TargetAlreadyExceeded { target: f64, existing: f64 },

    #[error("mask generation: {0}")]
    MaskGen(String),

    #[error("no observed cells in loss mask")]
    EmptyMask,
}

pub type Result<T> = std::result::Result<T, GridError>;
