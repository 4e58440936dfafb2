use thiserror::Error;

/// Errors raised by the surrogate construction and calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("parameter `{name}` value {value} outside [{lower}, {upper}]")]
    OutOfDomain {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("basis too large: {0}")]
    Capacity(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unsupported quadrature level {level} (supported: 0..={max})")]
    UnsupportedLevel { level: usize, max: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("normalization undefined: {0}")]
    Normalization(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite model value {value} at p = {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },

    #[error("degenerate conditional: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("external model: {0}")]
    External(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
