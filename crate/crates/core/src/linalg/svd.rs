//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The rows of the work array are the columns of the tall orientation of the
//! input, so each rotation touches two contiguous rows.

use super::matrix::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// Thin singular value decomposition `A = U diag(s) V^T`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows x k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: DenseMatrix,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// `cols x k` with orthonormal columns.
    pub v: DenseMatrix,
}

const MAX_SWEEPS: usize = 80;

pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(Svd { u: t.v, s: t.s, v: t.u })
    }
}

/// Singular values only, descending.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.s)
}

fn svd_tall(a: &DenseMatrix) -> Result<Svd> {
    let (m, p) = (a.rows(), a.cols());
    // w has p rows of length m: the columns of A
    let mut w = a.transpose().into_vec();
    let mut j = DenseMatrix::identity(p).into_vec();
    let eps = f64::EPSILON;

    let mut norms: Vec<f64> = (0..p).map(|i| dot(&w[i * m..(i + 1) * m], &w[i * m..(i + 1) * m])).collect();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for k in i + 1..p {
                let (lo, hi) = w.split_at_mut(k * m);
                let wi = &mut lo[i * m..(i + 1) * m];
                let wk = &mut hi[..m];
                let alpha = norms[i];
                let beta = norms[k];
                let gamma = dot(wi, wk);
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wi, wk, c, s);
                norms[i] = alpha - t * gamma;
                norms[k] = beta + t * gamma;
                let (jlo, jhi) = j.split_at_mut(k * p);
                rotate(&mut jlo[i * p..(i + 1) * p], &mut jhi[..p], c, s);
            }
        }
        // refresh norms to stop drift from the incremental updates
        for (i, nrm) in norms.iter_mut().enumerate() {
            let row = &w[i * m..(i + 1) * m];
            *nrm = dot(row, row);
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "one-sided Jacobi SVD",
            iterations: MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..p).collect();
    let sig: Vec<f64> = norms.iter().map(|x| x.max(0.0).sqrt()).collect();
    order.sort_by(|&x, &y| sig[y].total_cmp(&sig[x]));
    let smax = sig.iter().cloned().fold(0.0, f64::max);
    let tiny = smax * eps * (m.max(p) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut s = Vec::with_capacity(p);
    let mut v = DenseMatrix::zeros(p, p);
    let mut needs_completion = Vec::new();
    for (col, &src) in order.iter().enumerate() {
        let sv = sig[src];
        s.push(sv);
        let row = &w[src * m..(src + 1) * m];
        if sv > tiny && sv > 0.0 {
            u_cols.push(row.iter().map(|x| x / sv).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            needs_completion.push(col);
        }
        for r in 0..p {
            v[(r, col)] = j[src * p + r];
        }
    }
    complete_orthonormal(&mut u_cols, &needs_completion, m);

    let mut u = DenseMatrix::zeros(m, p);
    for (col, uc) in u_cols.iter().enumerate() {
        for (r, &x) in uc.iter().enumerate() {
            u[(r, col)] = x;
        }
    }
    Ok(Svd { u, s, v })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &target in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if idx == target {
                        continue;
                    }
                    let proj = dot(c, &e);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 0.5 {
                cols[target] = e.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}
