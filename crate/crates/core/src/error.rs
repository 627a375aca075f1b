use thiserror::Error;

/// Errors raised by the numerical and stochastic routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular input: {0}")]
    Singular(String),

    #[error("quadrature did not converge: estimate {value:e} with error {error:e} (requested {tolerance:e})")]
    QuadratureNonConvergence {
        value: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("degenerate surface: ‖∇U‖∞ = {grad_sup} must be < 1")]
    DegenerateSurface { grad_sup: f64 },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("no admissible surface: column {column:?} has no open site below level cap {cap}")]
    NoSurface { column: Vec<i64>, cap: usize },

    #[error("Hölder constraint violated on {} pair(s), first {:?}", .pairs.len(), .pairs.first())]
    HolderViolation { pairs: Vec<(Vec<i64>, Vec<i64>)> },

    #[error("parameter selection rejected: {0}")]
    Rejected(String),

    #[error("blow-up: sup-norm {sup} exceeded bound {bound} at step {step}")]
    BlowUp { sup: f64, bound: f64, step: usize },

    #[error("barrier violated at step {step}: u - v = {excess:e} at node {node:?}")]
    BarrierViolation {
        step: usize,
        excess: f64,
        node: Vec<usize>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
