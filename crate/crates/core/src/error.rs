//! Crate-wide error type.
//!
//! One enum keeps the toolkit's failure modes enumerable from the CLI, which
//! maps them onto process exit codes (input/parse errors vs numeric stage
//! failures vs planning and verification outcomes).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("operation requires dimension {required}, system has dimension {got}")]
    UnsupportedDim { required: &'static str, got: usize },

    #[error("non-finite coefficient or input: {0}")]
    NonFinite(&'static str),

    #[error("evaluation on a coordinate axis is singular (x̂ = {xh}, ŷ = {yh})")]
    SingularEvaluation { xh: f64, yh: f64 },

    #[error("trajectory diverged at t = {t} (|component| > {threshold:e})")]
    Divergence {
        t: f64,
        threshold: f64,
        /// Samples accumulated before the divergent step.
        partial: Box<crate::sim::Trajectory>,
    },

    #[error("all {count} ensemble members diverged")]
    EmptyEnsemble { count: usize },

    #[error("invalid generator parameters: {0}")]
    InvalidSpec(String),

    #[error("rank {r} out of range for state dimension {n}")]
    RankOutOfRange { r: usize, n: usize },

    #[error("variance profile undefined: ensemble data is identically zero")]
    ZeroVariance,

    #[error("sparse regression failed: {0}")]
    Regression(String),

    #[error("degenerate field: {0}")]
    DegenerateField(String),

    #[error("no admissible transition from branch {from} to branch {to}: {evidence}")]
    NoTransition {
        from: usize,
        to: usize,
        evidence: String,
    },

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("transition blocked by a stable limit cycle around the departing branch at u = ({u1}, {u2})")]
    CycleObstruction { u1: f64, u2: f64 },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI should report for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 2,
            Error::NoTransition { .. } | Error::Planning(_) | Error::CycleObstruction { .. } => 3,
            Error::Parse { .. } | Error::Config(_) | Error::Json(_) | Error::InvalidSpec(_) => 4,
            _ => 5,
        }
    }
}
