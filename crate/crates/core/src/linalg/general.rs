//! Eigenvalues of a general real matrix: balancing, Householder reduction to
//! upper Hessenberg form, then the Francis double-shift QR iteration.

use num_complex::Complex64;

use super::matrix::{dot, DenseMatrix};
use crate::error::{Error, Result};

const RADIX: f64 = 2.0;

/// All eigenvalues of `a`, sorted by (real, imaginary). Conjugate pairs are
/// returned with bitwise-equal real parts and opposite imaginary parts.
pub fn general_eigenvalues(a: &DenseMatrix) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(Error::InvalidParameter("general_eigenvalues needs a square matrix".into()));
    }
    let n = a.rows();
    let mut h = a.as_slice().to_vec();
    balance(&mut h, n);
    hessenberg(&mut h, n);
    let mut vals = hessenberg_qr(&mut h, n)?;
    sort_complex(&mut vals);
    Ok(vals)
}

/// Reduces an already-Hessenberg matrix in place; exposed for callers that
/// build Hessenberg matrices directly.
pub fn hessenberg_eigenvalues(mut h: DenseMatrix) -> Result<Vec<Complex64>> {
    let n = h.rows();
    let data = h.as_mut_slice();
    balance(data, n);
    let mut vals = hessenberg_qr(data, n)?;
    sort_complex(&mut vals);
    Ok(vals)
}

pub fn sort_complex(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Diagonal similarity by powers of two so rows and columns have comparable
/// norms. Exact in floating point.
fn balance(a: &mut [f64], n: usize) {
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for x in &mut a[i * n..(i + 1) * n] {
                        *x *= g;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form (similarity, in place).
fn hessenberg(a: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    let mut wrow = vec![0.0; n];
    for k in 0..n - 2 {
        let len = n - k - 1;
        let x: Vec<f64> = (k + 1..n).map(|i| a[i * n + k]).collect();
        let scale: f64 = x.iter().map(|t| t.abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut sigma = 0.0;
        for (vi, &xi) in v[..len].iter_mut().zip(&x) {
            *vi = xi / scale;
            sigma += *vi * *vi;
        }
        let tail: f64 = sigma - v[0] * v[0];
        if tail == 0.0 {
            continue;
        }
        let alpha = -v[0].signum() * sigma.sqrt();
        v[0] -= alpha;
        let vnorm2 = tail + v[0] * v[0];
        let beta = 2.0 / vnorm2;
        let vv = &v[..len];

        // left: rows k+1.., columns k..
        let w = &mut wrow[..n - k];
        w.iter_mut().for_each(|t| *t = 0.0);
        for (idx, &vi) in vv.iter().enumerate() {
            let row = &a[(k + 1 + idx) * n + k..(k + 2 + idx) * n];
            for (wj, &rj) in w.iter_mut().zip(row) {
                *wj += vi * rj;
            }
        }
        for (idx, &vi) in vv.iter().enumerate() {
            let f = beta * vi;
            let row = &mut a[(k + 1 + idx) * n + k..(k + 2 + idx) * n];
            for (rj, &wj) in row.iter_mut().zip(w.iter()) {
                *rj -= f * wj;
            }
        }
        // right: all rows, columns k+1..
        for i in 0..n {
            let row = &mut a[i * n + k + 1..(i + 1) * n];
            let s = beta * dot(row, vv);
            if s != 0.0 {
                for (rj, &vj) in row.iter_mut().zip(vv) {
                    *rj -= s * vj;
                }
            }
        }
        for i in k + 2..n {
            a[i * n + k] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix, eigenvalues only.
fn hessenberg_qr(a: &mut [f64], n: usize) -> Result<Vec<Complex64>> {
    let idx = |i: usize, j: usize| i * n + j;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[idx(i, j)].abs();
        }
    }
    let max_total = 40 * n.max(1);
    let mut total = 0;
    let mut t = 0.0;
    let mut nn = n as isize - 1;
    let mut its = 0;
    while nn >= 0 {
        let nu = nn as usize;
        // look for a small subdiagonal element
        let mut l = nu;
        while l >= 1 {
            let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[idx(l, l - 1)].abs() <= eps * s {
                a[idx(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = a[idx(nu, nu)];
        if l == nu {
            wr[nu] = x + t;
            wi[nu] = 0.0;
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[idx(nu - 1, nu - 1)];
        let mut w = a[idx(nu, nu - 1)] * a[idx(nu - 1, nu)];
        if l == nu - 1 {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let mut z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                z = p + z.copysign(p);
                wr[nu - 1] = x + z;
                wr[nu] = x + z;
                if z != 0.0 {
                    wr[nu] = x - w / z;
                }
                wi[nu - 1] = 0.0;
                wi[nu] = 0.0;
            } else {
                wr[nu - 1] = x + p;
                wr[nu] = x + p;
                wi[nu - 1] = z;
                wi[nu] = -z;
            }
            nn -= 2;
            its = 0;
            continue;
        }
        if total >= max_total || its >= 60 {
            return Err(Error::NoConvergence {
                what: "Francis double-shift QR",
                iterations: total,
            });
        }
        if its > 0 && its % 10 == 0 {
            // exceptional shift
            t += x;
            for i in 0..=nu {
                a[idx(i, i)] -= x;
            }
            let s = a[idx(nu, nu - 1)].abs() + a[idx(nu - 1, nu - 2)].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total += 1;

        // look for two consecutive small subdiagonal elements
        let mut m = nu - 2;
        let (mut p, mut q, mut r);
        loop {
            let z = a[idx(m, m)];
            let rr = x - z;
            let ss = y - z;
            p = (rr * ss - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
            q = a[idx(m + 1, m + 1)] - z - rr - ss;
            r = a[idx(m + 2, m + 1)];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
            if u <= eps * v {
                break;
            }
            m -= 1;
        }
        for i in m + 2..=nu {
            a[idx(i, i - 2)] = 0.0;
            if i != m + 2 {
                a[idx(i, i - 3)] = 0.0;
            }
        }
        // double QR step on rows l..nu and columns m..nu
        let mut k = m;
        while k < nu {
            if k != m {
                p = a[idx(k, k - 1)];
                q = a[idx(k + 1, k - 1)];
                r = if k != nu - 1 { a[idx(k + 2, k - 1)] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = (p * p + q * q + r * r).sqrt().copysign(p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                    }
                } else {
                    a[idx(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                let three = k != nu - 1;
                for j in k..=nu {
                    let mut pp = a[idx(k, j)] + q * a[idx(k + 1, j)];
                    if three {
                        pp += r * a[idx(k + 2, j)];
                        a[idx(k + 2, j)] -= pp * z;
                    }
                    a[idx(k + 1, j)] -= pp * y;
                    a[idx(k, j)] -= pp * x;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for i in l..=mmin {
                    let mut pp = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                    if three {
                        pp += z * a[idx(i, k + 2)];
                        a[idx(i, k + 2)] -= pp * r;
                    }
                    a[idx(i, k + 1)] -= pp * q;
                    a[idx(i, k)] -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_has_unit_imaginary_pair() {
        let a = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let v = general_eigenvalues(&a).unwrap();
        assert!((v[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((v[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn companion_of_quadratic() {
        // m^2 - 3m + 2
        let a = DenseMatrix::from_rows(&[vec![3.0, -2.0], vec![1.0, 0.0]]).unwrap();
        let v = general_eigenvalues(&a).unwrap();
        assert!((v[0].re - 1.0).abs() < 1e-14 && (v[1].re - 2.0).abs() < 1e-14);
        assert!(v.iter().all(|x| x.im == 0.0));
    }

    #[test]
    fn triangular_matrix() {
        let a = DenseMatrix::from_rows(&[
            vec![1.0, 5.0, -2.0, 7.0],
            vec![0.0, 4.0, 1.0, 0.5],
            vec![0.0, 0.0, -3.0, 2.0],
            vec![0.0, 0.0, 0.0, 2.5],
        ])
        .unwrap();
        let v = general_eigenvalues(&a).unwrap();
        let expect = [-3.0, 1.0, 2.5, 4.0];
        for (x, e) in v.iter().zip(expect) {
            assert!((x.re - e).abs() < 1e-12 && x.im == 0.0);
        }
    }
}
