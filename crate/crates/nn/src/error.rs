#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{layer}: shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("{layer}: stride-2 requires even spatial dims, got {h}x{w}")]
    OddSpatialDims { layer: String, h: usize, w: usize },

    #[error("{layer}: backward called without a cached forward pass")]
    BackwardWithoutForward { layer: String },

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: std::path::PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Grid(#[from] gridfill_core::GridError),
}

pub type Result<T> = std::result::Result<T, NnError>;
