//! Polynomial roots as eigenvalues of a balanced complex companion matrix.
//!
//! The companion matrix is already upper Hessenberg, so a complex
//! single-shift QR iteration with Givens rotations is run directly on it.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Roots of a polynomial together with the worst scaled residual.
#[derive(Clone, Debug)]
pub struct PolyRoots {
    pub roots: Vec<Complex64>,
    /// `max |P(r)| / sum_k |c_k||r|^k` over the returned roots.
    pub max_scaled_residual: f64,
}

const MAX_ITER_PER_ROOT: usize = 60;

/// Evaluates `P(x) = sum_k c[k] x^k` and `P'(x)` by Horner's rule.
pub fn horner(coeffs: &[Complex64], x: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// `sum_k |c_k| |x|^k`, the natural size of the terms of P(x).
pub fn horner_scale(coeffs: &[Complex64], x: Complex64) -> f64 {
    let ax = x.norm();
    coeffs.iter().rev().fold(0.0, |acc, c| acc * ax + c.norm())
}

/// Roots of `sum_k coeffs[k] m^k` (ascending powers).
///
/// Each root is polished by Newton steps, kept only while they reduce the
/// residual.
pub fn companion_roots(coeffs: &[Complex64]) -> Result<PolyRoots> {
    let mut deg = coeffs.len();
    while deg > 0 && coeffs[deg - 1].norm() == 0.0 {
        deg -= 1;
    }
    if deg < 2 {
        return Err(Error::Degenerate("polynomial has degree < 1".into()));
    }
    let deg = deg - 1;
    let lead = coeffs[deg];
    if lead.norm() < 1e-300 {
        return Err(Error::Degenerate("leading coefficient below 1e-300".into()));
    }
    let c = &coeffs[..=deg];

    // first row holds -c_{n-1}/c_n, ..., -c_0/c_n; ones on the subdiagonal
    let n = deg;
    let mut h = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        h[j] = -c[n - 1 - j] / lead;
    }
    for i in 1..n {
        h[i * n + i - 1] = Complex64::new(1.0, 0.0);
    }
    balance_complex(&mut h, n);
    let raw = complex_hessenberg_qr(&mut h, n)?;

    let mut roots = Vec::with_capacity(n);
    let mut worst = 0.0_f64;
    for r0 in raw {
        let mut r = r0;
        let mut res = scaled_residual(c, r);
        for _ in 0..3 {
            let (p, dp) = horner(c, r);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = r - p / dp;
            let cres = scaled_residual(c, cand);
            if cres < res {
                r = cand;
                res = cres;
            } else {
                break;
            }
        }
        worst = worst.max(res);
        roots.push(r);
    }
    Ok(PolyRoots {
        roots,
        max_scaled_residual: worst,
    })
}

fn scaled_residual(c: &[Complex64], x: Complex64) -> f64 {
    let (p, _) = horner(c, x);
    let s = horner_scale(c, x);
    if s == 0.0 {
        0.0
    } else {
        p.norm() / s
    }
}

fn balance_complex(a: &mut [Complex64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    let mut sweeps = 0;
    while !done && sweeps < 100 {
        done = true;
        sweeps += 1;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].l1_norm();
                    r += a[i * n + j].l1_norm();
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

/// Eigenvalues of a complex upper Hessenberg matrix (row-major, in place).
pub(crate) fn complex_hessenberg_qr(h: &mut [Complex64], n: usize) -> Result<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    let eps = f64::EPSILON;
    let mut out = vec![zero; n];
    let mut hi = n as isize - 1;
    let mut its = 0;
    let mut rot: Vec<(f64, Complex64)> = vec![(1.0, zero); n];
    while hi >= 0 {
        let hu = hi as usize;
        let mut lo = hu;
        while lo >= 1 {
            let s = h[(lo - 1) * n + lo - 1].l1_norm() + h[lo * n + lo].l1_norm();
            if h[lo * n + lo - 1].l1_norm() <= eps * s {
                h[lo * n + lo - 1] = zero;
                break;
            }
            lo -= 1;
        }
        if lo == hu {
            out[hu] = h[hu * n + hu];
            hi -= 1;
            its = 0;
            continue;
        }
        if its >= MAX_ITER_PER_ROOT {
            return Err(Error::NoConvergence {
                what: "complex Hessenberg QR",
                iterations: its,
            });
        }
        its += 1;

        let a = h[(hu - 1) * n + hu - 1];
        let b = h[(hu - 1) * n + hu];
        let c = h[hu * n + hu - 1];
        let d = h[hu * n + hu];
        let mu = if its % 10 == 0 {
            // exceptional shift
            d + Complex64::new(h[hu * n + hu - 1].norm(), 0.0) * 0.75
        } else {
            wilkinson(a, b, c, d)
        };

        for k in lo..=hu {
            h[k * n + k] -= mu;
        }
        for k in lo..hu {
            let x = h[k * n + k];
            let y = h[(k + 1) * n + k];
            let (cs, sn) = givens(x, y);
            rot[k] = (cs, sn);
            for j in k..=hu {
                let u = h[k * n + j];
                let v = h[(k + 1) * n + j];
                h[k * n + j] = u * cs + sn * v;
                h[(k + 1) * n + j] = -sn.conj() * u + v * cs;
            }
        }
        for k in lo..hu {
            let (cs, sn) = rot[k];
            let top = (k + 2).min(hu);
            for i in lo..=top {
                let u = h[i * n + k];
                let v = h[i * n + k + 1];
                h[i * n + k] = u * cs + v * sn.conj();
                h[i * n + k + 1] = -u * sn + v * cs;
            }
        }
        for k in lo..=hu {
            h[k * n + k] += mu;
        }
    }
    Ok(out)
}

/// Eigenvalue of [[a, b], [c, d]] closer to d.
fn wilkinson(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr * 0.25 - det).sqrt();
    let l1 = tr * 0.5 + disc;
    let l2 = tr * 0.5 - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Rotation with real cosine such that [[c, s], [-conj(s), c]] [x; y] = [r; 0].
fn givens(x: Complex64, y: Complex64) -> (f64, Complex64) {
    let ax = x.norm();
    let ay = y.norm();
    if ay == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if ax == 0.0 {
        return (0.0, Complex64::new(1.0, 0.0));
    }
    let r = ax.hypot(ay);
    let phase = x / ax;
    (ax / r, phase * y.conj() / r)
}
