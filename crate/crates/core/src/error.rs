use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhiError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("scale {scale} out of range: {reason}")]
    ScaleOutOfRange { scale: i32, reason: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("grid too coarse: {reason} (need N >= {required_n})")]
    GridTooCoarse { reason: String, required_n: usize },
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid space index: {0}")]
    InvalidIndex(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("not stabilized: {0}")]
    NotStabilized(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, PhiError>;
