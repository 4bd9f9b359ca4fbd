use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("op {op} unsupported: {reason}")]
    Unsupported { op: &'static str, reason: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor belongs to a different tape")]
    ForeignTape,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("horizon mismatch: expected {expected}, got {got}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("degenerate bounds: lo={lo} hi={hi}")]
    DegenerateBounds { lo: f64, hi: f64 },
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("gradient check: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
