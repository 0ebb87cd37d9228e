//! Error types shared across the pricing engine.

use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An evaluation landed within tolerance of a pole of the Laplace
    /// exponent or of a gamma factor.
    #[error("pole at z = {at}: {what}")]
    Pole { at: Complex64, what: String },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A root bracket did not contain a sign change.
    #[error("no sign change in bracket [{lo}, {hi}] for root {index} ({side} side)")]
    Bracket {
        side: &'static str,
        index: usize,
        lo: f64,
        hi: f64,
    },

    /// An iteration failed to converge within its configured budget.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Complex-q root continuation stalled or tracked roots collided.
    #[error("continuation failure: {0}")]
    Continuation(String),

    /// A moment computation hit psi(j) = q or a pole of psi and the limit
    /// evaluation also failed.
    #[error("singular moment evaluation: {0}")]
    Singular(String),

    /// Tail moments gave a non-positive variance; the beta correction is
    /// undefined.
    #[error("degenerate correction: {0}")]
    Degenerate(String),

    /// An inversion contour abscissa lies outside the analyticity strip.
    #[error("contour error: {0}")]
    Contour(String),

    /// Increment-density tabulation failed its normalization checks.
    #[error("sampler error: {0}")]
    Sampler(String),

    /// Model parameters violate a structural requirement.
    #[error("model error: {0}")]
    Model(String),

    /// Configuration parsing or validation failure.
    #[error("config error: {0}")]
    Config(String),
}
