//! Spectral laws of products `TX` where `T` is deterministic and `X` has
//! independent centered entries of variance `1/K`.
//!
//! The engine solves the self-consistent equations for the deterministic
//! equivalents of the resolvent traces of `(TX - z)(TX - z)^T`, locates the
//! support of the limiting singular-value density, tabulates it, and derives
//! the limiting eigenvalue density of `TX`. The Monte Carlo harness samples
//! ensembles and compares them to those predictions.

pub mod density;
pub mod error;
pub mod linalg;
pub mod master;
pub mod montecarlo;
pub mod par;
pub mod quadrature;
pub mod sigma;
pub mod support;

pub use error::{Error, Result};
pub use master::{MasterSolution, MasterSolver, SolverOptions, SpectralParameter};
pub use sigma::{ModelParams, SigmaSpectrum};
