use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("negative time {0} passed to the semigroup")]
    NegativeTime(f64),

    #[error("pair covariance for mode {mode} is not positive semidefinite (schur complement {schur:e})")]
    NonPsdCovariance { mode: usize, schur: f64 },

    #[error("{operation} needs a sup bound on the drift, but the drift has none")]
    MissingSupBound { operation: &'static str },

    #[error("{operation} requires white noise (epsilon = 0), got epsilon = {epsilon}")]
    ColoredNoiseUnsupported { operation: &'static str, epsilon: f64 },

    #[error("grid too coarse for {operation}: need at least {min} steps, got {got}")]
    GridTooCoarse {
        operation: &'static str,
        min: usize,
        got: usize,
    },

    #[error("path must vanish at the initial node, found |u(0)| = {0:e}")]
    NonzeroInitialValue(f64),

    #[error("{operation} needs a differentiable drift")]
    NotDifferentiable { operation: &'static str },

    #[error("{operation} needs a dissipative drift")]
    NotDissipative { operation: &'static str },
}
