use thiserror::Error;

/// Failure modes shared by every numerical routine in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The power series did not reach its tail bound, or cancellation would
    /// destroy the requested accuracy. The argument is too large for the
    /// series path.
    #[error("series did not converge for |z| = {modulus} (terms used: {terms})")]
    NonConvergent { modulus: f64, terms: usize },

    /// The value exceeds the double-precision range (large positive
    /// `z^{1/α}`).
    #[error("E_(alpha,beta)(z) overflows double precision at |z| = {modulus}")]
    Overflow { modulus: f64 },

    /// A contour node landed on (or next to) a pole of the Hankel integrand.
    #[error("contour node within {distance:e} of a pole; rescale the contour")]
    PoleProximity { distance: f64 },

    #[error("operator series diverges numerically: |A c| = {norm}")]
    SeriesDivergence { norm: f64 },

    #[error("the kernel t^(alpha-1) is singular at t = 0")]
    SingularTime,

    #[error("S_alpha(t) is numerically singular (condition estimate {condition:e})")]
    NumericallySingular { condition: f64 },

    #[error("grid is not uniform (relative spacing deviation {deviation:e})")]
    NonUniformGrid { deviation: f64 },

    #[error("quadrature tolerance {tol:e} not met (estimate {estimate:e}) after {panels} panels")]
    ToleranceNotMet { tol: f64, estimate: f64, panels: usize },

    #[error("closed-form piece formula unavailable: {0}")]
    MissingPieceFormula(String),

    #[error("Picard iteration not converged after {iterations} iterations (last difference {last_difference:e})")]
    NotConverged { iterations: usize, last_difference: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
