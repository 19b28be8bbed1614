use thiserror::Error;

/// Errors raised anywhere in the synthesis and verification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("quadrature did not converge: relative change {change:.3e} exceeds {tol:.1e} at order {order}")]
    Quadrature { change: f64, tol: f64, order: usize },

    #[error("degenerate gradient: |v| = 0, eSTA correction undefined")]
    DegenerateGradient,

    #[error("non-concave parabola: v^T H v = {0:.6e} >= 0")]
    NonConcave(f64),

    #[error("imaginary-time propagation did not converge within {steps} steps (last energy change {delta:.3e})")]
    GroundState { steps: usize, delta: f64 },

    #[error("grid too small: boundary probability {0:.3e} exceeds tolerance")]
    GridTooSmall(f64),

    #[error("time step too large: norm drift {0:.3e} exceeds tolerance")]
    StepSize(f64),

    #[error("stencil fidelity {value} at delta = {delta} lies outside [0, 1]")]
    StencilRange { delta: f64, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
