use thiserror::Error;

/// Errors raised by the engine and the simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// `|z|` falls inside the excluded band around the unit circle.
    #[error("|z| = {z_mod} lies in the excluded band ||z|^2 - 1| < {band}")]
    ExcludedBand { z_mod: f64, band: f64 },

    #[error("denominator {0:e} too close to a pole")]
    PoleProximity(f64),

    #[error("no admissible root of the master equation at w = {re} + {im}i")]
    NoAdmissibleRoot { re: f64, im: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureTolerance { estimate: f64, tolerance: f64 },

    #[error("total mass {mass} deviates from 1 (rescan advised)")]
    MassDeficit { mass: f64 },

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
