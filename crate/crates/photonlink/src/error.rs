//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no admittance root in the search window [{lo_hz:.4e}, {hi_hz:.4e}] Hz")]
    NoRoot { lo_hz: f64, hi_hz: f64 },

    #[error("junction inductance diverges: |cos delta| < {0:.1e}")]
    DivergentInductance(f64),

    #[error("root finder failed to converge: {0}")]
    NonConvergence(String),

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
