use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires a {required} grid")]
    WrongBoundary { required: &'static str },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("domain too short: tail {tail:.3e} exceeds tolerance {tol:.3e}")]
    DomainTooShort { tail: f64, tol: f64 },

    #[error("constraint set is rank deficient (pivot {pivot:.3e})")]
    RankDeficient { pivot: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular modulation Jacobian (|det| = {det:.3e}, scale {scale:.3e})")]
    SingularJacobian { det: f64, scale: f64 },

    #[error("non-finite or blown-up state at t = {t}")]
    BlowUp { t: f64 },

    #[error("closed-form and operator kappa disagree at p = {p}: relative gap {gap:.3e}")]
    DualPathMismatch { p: f64, gap: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
