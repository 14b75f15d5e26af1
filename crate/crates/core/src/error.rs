use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tensor quadrature supports at most {cap} dimensions, got {dims}")]
    TensorCap { dims: usize, cap: usize },

    #[error("non-finite integrand value at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("model has decay (inf E = {inf_energy}); {hint}")]
    DecayModel { inf_energy: f64, hint: &'static str },

    #[error("model has no decay; {0}")]
    NoDecay(&'static str),

    #[error("threshold violated: {0}")]
    Threshold(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Fock truncation insufficient: top occupation amplitude {amplitude:e} at mode {mode}")]
    Truncation { mode: usize, amplitude: f64 },

    #[error("phase unwrapping failed: {0}")]
    Unwrap(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("symbolic error: {0}")]
    Symbolic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
