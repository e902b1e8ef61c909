//! Dense kernels written for this crate: symmetric eigensolver, SVD,
//! nonsymmetric eigenvalues, companion-matrix roots and Haar sampling.

mod companion;
mod general;
mod haar;
mod matrix;
mod svd;
mod symmetric;

pub use companion::{companion_roots, horner, horner_scale, PolyRoots};
pub use general::{general_eigenvalues, hessenberg_eigenvalues, sort_complex};
pub use haar::{qr_haar, spectral_norm_estimate};
pub use matrix::DenseMatrix;
pub use svd::{singular_values, svd, Svd};
pub use symmetric::{symmetric_eigen, symmetric_eigenvalues, symmetric_eigenvalues_owned, SymmetricEigen};

#[allow(unused_imports)]
pub(crate) use matrix::{axpy, dot, norm2};
