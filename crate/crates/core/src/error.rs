use thiserror::Error;

/// Errors produced by the numerics modules.
///
/// Variants carry enough location data that a CLI front end can attribute a
/// failure to the module and the sample point that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("invariant `{check}` violated at {location}: {detail}")]
    Invariant {
        check: String,
        location: String,
        detail: String,
    },

    #[error("evaluation outside the chart domain at {point}: {detail}")]
    Domain { point: String, detail: String },

    #[error("step size underflow at s = {s:.6} near {point} (solution blow-up)")]
    StepUnderflow { s: f64, point: String },

    #[error("conjugate point on the geodesic at s = {s:.12}")]
    ConjugatePoint { s: f64 },

    #[error("degenerate Jacobi zero near s = {s:.12}: refine tolerances")]
    DegenerateZero { s: f64 },

    #[error("window too small: {detail}; suggested half-width {suggested:.3}")]
    WindowTooSmall { detail: String, suggested: f64 },

    #[error("stable Riccati solve did not converge: {detail}")]
    NotConverged { detail: String },

    #[error("region/chart mismatch: {0}")]
    RegionMismatch(String),

    #[error("premise violated: {0}")]
    PremiseViolated(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
