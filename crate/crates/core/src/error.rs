use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("deformation field is not admissible: X-norm estimate {norm:.3e} exceeds gate {gate:.3e}")]
    Inadmissible { norm: f64, gate: f64 },
    #[error("point {0:?} lies outside the domain")]
    OutsideDomain([f64; 3]),
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
