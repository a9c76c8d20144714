use thiserror::Error;

/// Errors raised by the simulation and diagnostic routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("multiplier is not finite ({value}) at wavenumber ({}, {})", .wavenumber[0], .wavenumber[1])]
    NonFiniteMultiplier { wavenumber: [f64; 2], value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("misaligned sub-torus: {0}")]
    Misaligned(String),

    #[error("test function support violation: {0}")]
    SupportViolation(String),

    #[error("quadrature did not converge: estimated error {achieved:e} > tolerance {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("blow-up at t = {time}: sup norm {sup_norm:e} exceeds guard {guard:e}")]
    BlowUp {
        time: f64,
        sup_norm: f64,
        guard: f64,
        /// Last state that passed the guard, as (time, field values).
        last_good: Box<(f64, Vec<f64>)>,
    },

    #[error("trajectory has no stored state at t = {0}")]
    MissingTime(f64),

    #[error("fit window is empty: {0}")]
    EmptyFit(String),

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
