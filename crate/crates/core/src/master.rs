//! The self-consistent equations for `m_1c`, `m_2c` in the reduced form
//! `f(sqrt(w), m) = 0`, with `m = sqrt(w) (1 + m_1)`:
//!
//! ```text
//! f(q, m) = -q + m + (1/K) sum_i l_i s_i m (m^2 - zeta) / p_i(m),
//! p_i(m)  = q m^3 - (s_i + zeta) m^2 - q zeta m + zeta^2,   zeta = |z|^2.
//! ```
//!
//! and `1/m_2 = -w (1 + m_1) + zeta / (1 + m_1)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{companion_roots, horner};
use crate::sigma::{check_z_band, SigmaSpectrum};

pub type C64 = Complex64;

const TINY: f64 = 1e-300;

#[inline]
fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `w` in the closed upper half-plane, its square root branch and `|z|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralParameter {
    #[serde(serialize_with = "ser_c64")]
    pub w: C64,
    #[serde(serialize_with = "ser_c64")]
    pub sqrt_w: C64,
    pub z_mod: f64,
}

pub(crate) fn ser_c64<S: serde::Serializer>(v: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&v.re)?;
    t.serialize_element(&v.im)?;
    t.end()
}

/// Square root with `Im > 0` off `[0, inf)` and positive on `(0, inf)`.
pub fn sqrt_branch(w: C64) -> C64 {
    if w.im == 0.0 && w.re >= 0.0 {
        return c(w.re.sqrt(), 0.0);
    }
    let r = w.sqrt();
    if r.im < 0.0 {
        -r
    } else {
        r
    }
}

impl SpectralParameter {
    pub fn new(w: C64, z_mod: f64) -> Result<Self> {
        if !(w.re.is_finite() && w.im.is_finite()) || w.im < 0.0 {
            return Err(Error::InvalidParameter(format!("w = {w} must be finite with Im w >= 0")));
        }
        if !(z_mod.is_finite() && z_mod >= 0.0) {
            return Err(Error::InvalidParameter(format!("|z| = {z_mod} must be >= 0")));
        }
        Ok(Self {
            w,
            sqrt_w: sqrt_branch(w),
            z_mod,
        })
    }

    pub fn real(e: f64, z_mod: f64) -> Result<Self> {
        Self::new(c(e, 0.0), z_mod)
    }

    pub fn zeta(&self) -> f64 {
        self.z_mod * self.z_mod
    }
}

/// `f` and its first and mixed second derivatives at `(q, m)`.
#[derive(Clone, Copy, Debug)]
pub struct FDerivs {
    pub f: C64,
    /// `d f / d m`
    pub f_m: C64,
    /// `d f / d sqrt(w)`
    pub f_q: C64,
    pub f_mm: C64,
    pub f_mq: C64,
    /// Size of the largest term, for relative residuals.
    pub scale: f64,
}

/// Precomputed `l_i s_i / K` and `s_i`.
#[derive(Clone, Debug)]
pub(crate) struct Coeffs {
    pub s: Vec<f64>,
    pub ls: Vec<f64>,
}

impl Coeffs {
    pub fn new(spec: &SigmaSpectrum) -> Self {
        let k = spec.k() as f64;
        Self {
            s: spec.s().to_vec(),
            ls: spec.s().iter().zip(spec.l()).map(|(s, &l)| s * l as f64 / k).collect(),
        }
    }
}

/// The cubic `p_i(m)` and its size `sum |terms|`.
#[inline]
pub fn cubic_p(q: C64, s: f64, zeta: f64, m: C64) -> (C64, f64) {
    let m2 = m * m;
    let p = q * m2 * m - (s + zeta) * m2 - q * zeta * m + zeta * zeta;
    let am = m.norm();
    let scale = q.norm() * am * am * am + (s + zeta) * am * am + q.norm() * zeta * am + zeta * zeta;
    (p, scale)
}

pub(crate) fn f_derivs(co: &Coeffs, q: C64, zeta: f64, m: C64) -> Result<FDerivs> {
    let mut f = m - q;
    let mut f_m = c(1.0, 0.0);
    let mut f_q = c(-1.0, 0.0);
    let mut f_mm = c(0.0, 0.0);
    let mut f_mq = c(0.0, 0.0);
    let mut scale = q.norm().max(m.norm());
    if zeta == 0.0 {
        for (&s, &ls) in co.s.iter().zip(&co.ls) {
            // m / (q m - s)
            let d = q * m - s;
            if d.norm() < TINY {
                return Err(Error::PoleProximity(d.norm()));
            }
            let d2 = d * d;
            let d3 = d2 * d;
            let r = m / d;
            f += ls * r;
            f_m += ls * (-s / d2);
            f_q += ls * (-(m * m) / d2);
            f_mm += ls * (2.0 * s * q / d3);
            f_mq += ls * (2.0 * s * m / d3);
            scale = scale.max(ls * r.norm());
        }
    } else {
        let m2 = m * m;
        let nn = m2 * m - zeta * m;
        let np = 3.0 * m2 - zeta;
        for (&s, &ls) in co.s.iter().zip(&co.ls) {
            let sz = s + zeta;
            let (p, _) = cubic_p(q, s, zeta, m);
            if p.norm() < TINY {
                return Err(Error::PoleProximity(p.norm()));
            }
            let pm = 3.0 * q * m2 - 2.0 * sz * m - q * zeta;
            let pmm = 6.0 * q * m - 2.0 * sz;
            let p2 = p * p;
            let p3 = p2 * p;
            let num_m = np * p - nn * pm;
            let r = nn / p;
            f += ls * r;
            f_m += ls * (num_m / p2);
            f_q += ls * (-(nn * nn) / p2);
            f_mm += ls * ((6.0 * m * p - nn * pmm) / p2 - 2.0 * pm * num_m / p3);
            f_mq += ls * (-2.0 * nn * np / p2 + 2.0 * nn * nn * pm / p3);
            scale = scale.max(ls * r.norm());
        }
    }
    Ok(FDerivs {
        f,
        f_m,
        f_q,
        f_mm,
        f_mq,
        scale,
    })
}

/// `f(sqrt(w), m)`.
pub fn eval_f(p: &SpectralParameter, m: C64, spec: &SigmaSpectrum) -> Result<C64> {
    Ok(f_derivs(&Coeffs::new(spec), p.sqrt_w, p.zeta(), m)?.f)
}

/// `f` with `d f/d m`, `d f/d sqrt(w)` and second derivatives.
pub fn eval_f_derivatives(p: &SpectralParameter, m: C64, spec: &SigmaSpectrum) -> Result<FDerivs> {
    f_derivs(&Coeffs::new(spec), p.sqrt_w, p.zeta(), m)
}

/// `m_2` from `m_1` through `1/m_2 = -w (1 + m_1) + |z|^2 / (1 + m_1)`.
pub fn m2_from_m1(m1: C64, p: &SpectralParameter) -> Result<C64> {
    let one_m1 = 1.0 + m1;
    if one_m1.norm() < TINY {
        return Err(Error::PoleProximity(one_m1.norm()));
    }
    let den = -p.w * one_m1 + p.zeta() / one_m1;
    if den.norm() < TINY {
        return Err(Error::PoleProximity(den.norm()));
    }
    Ok(1.0 / den)
}

/// `m_1 = m / sqrt(w) - 1`.
pub fn m1_from_m(m: C64, p: &SpectralParameter) -> C64 {
    m / p.sqrt_w - 1.0
}

// ---------------------------------------------------------------------------
// Polynomial form

fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![c(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add_scaled(acc: &mut Vec<C64>, a: &[C64], k: f64) {
    if acc.len() < a.len() {
        acc.resize(a.len(), c(0.0, 0.0));
    }
    for (x, y) in acc.iter_mut().zip(a) {
        *x += k * y;
    }
}

/// Numerator and denominator of the `i`-th term (ascending coefficients).
fn term_polys(q: C64, s: f64, zeta: f64) -> (Vec<C64>, Vec<C64>) {
    if zeta == 0.0 {
        (vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(-s, 0.0), q])
    } else {
        (
            vec![c(0.0, 0.0), c(-zeta, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(zeta * zeta, 0.0), -q * zeta, c(-(s + zeta), 0.0), q],
        )
    }
}

/// `P_w(m) = f(sqrt(w), m) prod_i den_i(m)` in ascending powers of `m`,
/// degree `3n + 1` (or `n + 1` when `|z| = 0`).
pub fn build_polynomial(p: &SpectralParameter, spec: &SigmaSpectrum) -> Result<Vec<C64>> {
    build_polynomial_q(&Coeffs::new(spec), p.sqrt_w, p.zeta())
}

fn build_polynomial_q(co: &Coeffs, q: C64, zeta: f64) -> Result<Vec<C64>> {
    let terms: Vec<_> = co.s.iter().map(|&s| term_polys(q, s, zeta)).collect();
    let mut total = vec![-q, c(1.0, 0.0)];
    for (_, den) in &terms {
        total = poly_mul(&total, den);
    }
    for (i, (num, _)) in terms.iter().enumerate() {
        let mut prod = num.clone();
        for (j, (_, den)) in terms.iter().enumerate() {
            if j != i {
                prod = poly_mul(&prod, den);
            }
        }
        poly_add_scaled(&mut total, &prod, co.ls[i]);
    }
    if total.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) {
        return Err(Error::Numerical("polynomial coefficients overflowed".into()));
    }
    Ok(total)
}

/// Numerator of `d f / d m` cleared of denominators, ascending powers,
/// degree `<= 6n`.
pub(crate) fn critical_polynomial(co: &Coeffs, q: C64, zeta: f64) -> Vec<C64> {
    let terms: Vec<_> = co.s.iter().map(|&s| term_polys(q, s, zeta)).collect();
    let deriv = |a: &[C64]| -> Vec<C64> {
        if a.len() <= 1 {
            return vec![c(0.0, 0.0)];
        }
        a.iter().enumerate().skip(1).map(|(k, x)| x * k as f64).collect()
    };
    let squares: Vec<Vec<C64>> = terms.iter().map(|(_, d)| poly_mul(d, d)).collect();
    let mut total = vec![c(1.0, 0.0)];
    for sq in &squares {
        total = poly_mul(&total, sq);
    }
    for (i, (num, den)) in terms.iter().enumerate() {
        // num' den - num den'
        let a = poly_mul(&deriv(num), den);
        let b = poly_mul(num, &deriv(den));
        let mut diff = a.clone();
        poly_add_scaled(&mut diff, &b, -1.0);
        let mut prod = diff;
        for (j, sq) in squares.iter().enumerate() {
            if j != i {
                prod = poly_mul(&prod, sq);
            }
        }
        poly_add_scaled(&mut total, &prod, co.ls[i]);
    }
    total
}

// ---------------------------------------------------------------------------
// Solver

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Polynomial,
    NewtonContinuation,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolverOptions {
    /// Bound on `|f| / max(1, term size)` at the returned root.
    pub tol: f64,
    pub max_newton: usize,
    /// Minimum `||z|^2 - 1|`; `None` skips the band check.
    pub z_band_min: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_newton: 50,
            z_band_min: Some(0.05),
        }
    }
}

impl SolverOptions {
    /// No band check; for `|z|` near 1 experiments and oracles.
    pub fn diagnostic() -> Self {
        Self {
            z_band_min: None,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MasterSolution {
    pub parameter: SpectralParameter,
    #[serde(serialize_with = "ser_c64")]
    pub m_c: C64,
    #[serde(serialize_with = "ser_c64")]
    pub m1c: C64,
    #[serde(serialize_with = "ser_c64")]
    pub m2c: C64,
    pub residual: f64,
    pub n_candidate_roots: usize,
    pub method: SolveMethod,
    pub iterations: usize,
}

/// Reusable solver for one spectrum and one `|z|`.
#[derive(Clone, Debug)]
pub struct MasterSolver {
    co: Coeffs,
    z_mod: f64,
    zeta: f64,
    opts: SolverOptions,
}

struct Candidate {
    m: C64,
    iterations: usize,
}

impl MasterSolver {
    pub fn new(spec: &SigmaSpectrum, z_mod: f64, opts: SolverOptions) -> Result<Self> {
        if let Some(band) = opts.z_band_min {
            check_z_band(z_mod, band)?;
        }
        if !(z_mod.is_finite() && z_mod >= 0.0) {
            return Err(Error::InvalidParameter(format!("|z| = {z_mod}")));
        }
        Ok(Self {
            co: Coeffs::new(spec),
            z_mod,
            zeta: z_mod * z_mod,
            opts,
        })
    }

    pub fn z_mod(&self) -> f64 {
        self.z_mod
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn derivs(&self, q: C64, m: C64) -> Result<FDerivs> {
        f_derivs(&self.co, q, self.zeta, m)
    }

    fn newton(&self, q: C64, m0: C64) -> Result<Candidate> {
        let mut m = m0;
        for it in 0..self.opts.max_newton {
            let d = f_derivs(&self.co, q, self.zeta, m)?;
            if d.f_m.norm() < TINY {
                return Err(Error::Numerical("vanishing derivative in Newton step".into()));
            }
            let step = d.f / d.f_m;
            m -= step;
            if step.norm() <= 4.0 * f64::EPSILON * m.norm().max(1e-300) {
                return Ok(Candidate { m, iterations: it + 1 });
            }
        }
        let d = f_derivs(&self.co, q, self.zeta, m)?;
        if d.f.norm() <= self.opts.tol * d.scale.max(1.0) {
            return Ok(Candidate {
                m,
                iterations: self.opts.max_newton,
            });
        }
        Err(Error::NoConvergence {
            what: "Newton polish of the master equation",
            iterations: self.opts.max_newton,
        })
    }

    fn pole_safe(&self, q: C64, m: C64) -> bool {
        if self.zeta == 0.0 {
            return self.co.s.iter().all(|&s| {
                let d = q * m - s;
                d.norm() > 1e-8 * (q.norm() * m.norm() + s)
            });
        }
        self.co.s.iter().all(|&s| {
            let (p, scale) = cubic_p(q, s, self.zeta, m);
            p.norm() > 1e-8 * scale
        })
    }

    fn admissible(w: C64, q: C64, m: C64) -> bool {
        let m1 = m / q - 1.0;
        m1.im > 0.0 && (w * m1).im > 0.0
    }

    /// All polished roots of `P_w` passing the pole and half-plane filters.
    fn candidates(&self, w: C64, q: C64) -> Result<Vec<Candidate>> {
        let poly = build_polynomial_q(&self.co, q, self.zeta)?;
        let roots = companion_roots(&poly)?;
        let mut out: Vec<Candidate> = Vec::new();
        for r in roots.roots {
            if !self.pole_safe(q, r) {
                continue;
            }
            let Ok(cand) = self.newton(q, r) else { continue };
            if !Self::admissible(w, q, cand.m) {
                continue;
            }
            if out.iter().any(|o| (o.m - cand.m).norm() <= 1e-10 * (1.0 + cand.m.norm())) {
                continue;
            }
            out.push(cand);
        }
        Ok(out)
    }

    fn finish(&self, w: C64, q: C64, cand: Candidate, n_cand: usize, method: SolveMethod) -> Result<MasterSolution> {
        let d = f_derivs(&self.co, q, self.zeta, cand.m)?;
        let p = SpectralParameter {
            w,
            sqrt_w: q,
            z_mod: self.z_mod,
        };
        let m1c = m1_from_m(cand.m, &p);
        let m2c = m2_from_m1(m1c, &p)?;
        let residual = d.f.norm();
        if residual > self.opts.tol * d.scale.max(1.0) {
            return Err(Error::NoConvergence {
                what: "master equation residual",
                iterations: cand.iterations,
            });
        }
        Ok(MasterSolution {
            parameter: p,
            m_c: cand.m,
            m1c,
            m2c,
            residual,
            n_candidate_roots: n_cand,
            method,
            iterations: cand.iterations,
        })
    }

    /// Solves at `w` with `Im w > 0`.
    pub fn solve(&self, w: C64) -> Result<MasterSolution> {
        if !(w.im > 0.0) {
            return Err(Error::InvalidParameter(format!("solve needs Im w > 0, got {w}")));
        }
        let q = sqrt_branch(w);
        let mut cands = self.candidates(w, q)?;
        match cands.len() {
            1 => {
                let cand = cands.pop().unwrap();
                self.finish(w, q, cand, 1, SolveMethod::Polynomial)
            }
            n => {
                let path = self.continuation(w.re, &[w.im])?;
                let mut sol = path.into_iter().next().unwrap();
                sol.n_candidate_roots = n;
                Ok(sol)
            }
        }
    }

    /// Solutions at `E + i eta_k` for the given decreasing `etas`, following
    /// the branch continuously from `Im w = 1` (or from `eta_0` if larger).
    pub fn continuation(&self, e: f64, etas: &[f64]) -> Result<Vec<MasterSolution>> {
        if etas.is_empty() || etas.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParameter("continuation needs positive etas".into()));
        }
        let mut eta = etas[0].max(1.0);
        let w0 = c(e, eta);
        let q0 = sqrt_branch(w0);
        let mut cands = self.candidates(w0, q0)?;
        if cands.is_empty() {
            return Err(Error::NoAdmissibleRoot { re: e, im: eta });
        }
        // at Im w >= 1 the admissible root is unique; if rounding admits more,
        // move further up until only one survives
        let mut lift = eta;
        while cands.len() > 1 && lift < 1e6 {
            lift *= 4.0;
            let w = c(e, lift);
            cands = self.candidates(w, sqrt_branch(w))?;
        }
        let mut m = cands[0].m;
        let mut cur = lift;
        let mut total_it = cands[0].iterations;
        if lift > eta {
            m = self.track(e, lift, eta, m, &mut total_it)?;
            cur = eta;
        }
        let mut out = Vec::with_capacity(etas.len());
        for &target in etas {
            if target < cur {
                m = self.track(e, cur, target, m, &mut total_it)?;
                cur = target;
            }
            eta = target;
            let w = c(e, eta);
            let q = sqrt_branch(w);
            let cand = Candidate { m, iterations: total_it };
            let mut sol = self.finish(w, q, cand, 1, SolveMethod::NewtonContinuation)?;
            if !Self::admissible(w, q, m) {
                return Err(Error::NoAdmissibleRoot { re: e, im: eta });
            }
            sol.n_candidate_roots = self.candidates(w, q).map(|v| v.len()).unwrap_or(0);
            out.push(sol);
        }
        Ok(out)
    }

    /// Tracks a root from `E + i from` down to `E + i to` with geometric steps.
    fn track(&self, e: f64, from: f64, to: f64, m0: C64, iters: &mut usize) -> Result<C64> {
        let mut m = m0;
        let mut eta = from;
        let mut factor: f64 = 0.7;
        while eta > to {
            let next = (eta * factor).max(to);
            let w = c(e, next);
            let q = sqrt_branch(w);
            // prefer an admissible polynomial root close to the current one
            let picked = match self.candidates(w, q) {
                Ok(cands) if !cands.is_empty() => cands
                    .into_iter()
                    .min_by(|a, b| (a.m - m).norm().total_cmp(&(b.m - m).norm())),
                _ => None,
            };
            let next_m = match picked {
                Some(cand) => Some(cand),
                None => self.newton(q, m).ok().filter(|cand| Self::admissible(w, q, cand.m)),
            };
            match next_m {
                Some(cand) => {
                    *iters += cand.iterations;
                    m = cand.m;
                    eta = next;
                    factor = (factor * 0.8).max(0.3).min(0.7);
                }
                None => {
                    factor = factor.sqrt();
                    if factor > 0.999 {
                        return Err(Error::NoAdmissibleRoot { re: e, im: next });
                    }
                }
            }
        }
        Ok(m)
    }

    /// `(rho_1c(x), rho_2c(x), uncertainty)` by Richardson extrapolation of
    /// `Im m / pi` at `eta0, eta0/2, eta0/4`.
    pub fn density_at(&self, x: f64, eta0: f64) -> Result<DensityPoint> {
        if !(x > 0.0) {
            return Err(Error::InvalidParameter(format!("density_at needs x > 0, got {x}")));
        }
        let etas = [eta0, eta0 / 2.0, eta0 / 4.0];
        let sols = self.solve_etas(x, &etas)?;
        let im1: Vec<f64> = sols.iter().map(|s| s.m1c.im).collect();
        let im2: Vec<f64> = sols.iter().map(|s| s.m2c.im).collect();
        let (r1, u1) = richardson3(&im1);
        let (r2, u2) = richardson3(&im2);
        let pi = std::f64::consts::PI;
        Ok(DensityPoint {
            x,
            rho1: r1.max(0.0) / pi,
            rho2: r2.max(0.0) / pi,
            uncertainty: u1.max(u2) / pi,
            m_c: sols[2].m_c,
        })
    }

    /// Solutions at `x + i eta` for each eta (decreasing), using the direct
    /// polynomial path when unambiguous.
    pub fn solve_etas(&self, x: f64, etas: &[f64]) -> Result<Vec<MasterSolution>> {
        let mut out = Vec::with_capacity(etas.len());
        for &eta in etas {
            let w = c(x, eta);
            let q = sqrt_branch(w);
            let mut cands = self.candidates(w, q)?;
            if cands.len() == 1 {
                let cand = cands.pop().unwrap();
                out.push(self.finish(w, q, cand, 1, SolveMethod::Polynomial)?);
            } else {
                return self.continuation(x, etas);
            }
        }
        Ok(out)
    }

    /// Solution of the master equation on the negative axis `w = -y`.
    ///
    /// There `m = i mu` with `mu` the unique root in
    /// `(sqrt(y), sqrt(y) + mean/sqrt(y))` of a real increasing equation;
    /// returns `(m_1c(-y), m_2c(-y))`, both positive.
    pub fn negative_axis(&self, y: f64) -> Result<(f64, f64)> {
        if !(y > 0.0) {
            return Err(Error::InvalidParameter(format!("negative_axis needs y > 0, got {y}")));
        }
        let v = y.sqrt();
        let zeta = self.zeta;
        let g = |mu: f64| -> (f64, f64) {
            let mut val = mu - v;
            let mut der = 1.0;
            for (&s, &ls) in self.co.s.iter().zip(&self.co.ls) {
                let num = mu * (mu * mu + zeta);
                let dnum = 3.0 * mu * mu + zeta;
                let den = v * mu * mu * mu + (s + zeta) * mu * mu + v * zeta * mu + zeta * zeta;
                let dden = 3.0 * v * mu * mu + 2.0 * (s + zeta) * mu + v * zeta;
                val -= ls * num / den;
                der -= ls * (dnum * den - num * dden) / (den * den);
            }
            (val, der)
        };
        let total: f64 = self.co.ls.iter().sum();
        let mut lo = v;
        let mut hi = v + total / v;
        // safeguarded Newton inside the shrinking bracket
        let mut mu = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (gv, gd) = g(mu);
            if gv == 0.0 {
                break;
            }
            if gv < 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let newton = mu - gv / gd;
            let next = if gd > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - mu).abs() <= 2.0 * f64::EPSILON * mu || hi - lo <= 2.0 * f64::EPSILON * hi {
                mu = next;
                break;
            }
            mu = next;
        }
        let m1 = mu / v - 1.0;
        let one = 1.0 + m1;
        let m2 = 1.0 / (y * one + zeta / one);
        Ok((m1, m2))
    }
}

/// Result of a density evaluation at one point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DensityPoint {
    pub x: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub uncertainty: f64,
    #[serde(serialize_with = "ser_c64")]
    pub m_c: C64,
}

/// Extrapolates `f(h), f(h/2), f(h/4)` to `h = 0` assuming
/// `f(h) = a + b h + c h^2`; returns the value and a spread estimate.
pub fn richardson3(f: &[f64]) -> (f64, f64) {
    let r1a = 2.0 * f[1] - f[0];
    let r1b = 2.0 * f[2] - f[1];
    let r2 = (4.0 * r1b - r1a) / 3.0;
    (r2, (r2 - r1b).abs().max((r2 - f[2]).abs() * 1e-3))
}

/// One-shot solve at `p` (`Im w > 0`).
pub fn solve_mc(p: &SpectralParameter, spec: &SigmaSpectrum, opts: SolverOptions) -> Result<MasterSolution> {
    MasterSolver::new(spec, p.z_mod, opts)?.solve(p.w)
}

/// One-shot density at `x > 0`.
pub fn density_at(x: f64, z_mod: f64, spec: &SigmaSpectrum, opts: SolverOptions, eta0: f64) -> Result<DensityPoint> {
    MasterSolver::new(spec, z_mod, opts)?.density_at(x, eta0)
}

pub const DEFAULT_ETA0: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Real-w factorization

/// Roots `a > b > 0 > -c` of `p_i` at real `w > 0` and partial-fraction
/// coefficients for each distinct eigenvalue.
#[derive(Clone, Debug, Serialize)]
pub struct CubicFactorization {
    pub w: f64,
    pub z_mod: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub coef_a: Vec<f64>,
    pub coef_b: Vec<f64>,
    pub coef_c: Vec<f64>,
    /// `(1/K) sum l_i s_i`, the coefficient of `1/sqrt(w)` in the expansion.
    pub mean: f64,
    weights: Vec<f64>,
}

impl CubicFactorization {
    /// `f` from the partial-fraction form.
    pub fn eval_pfd(&self, m: f64) -> f64 {
        let q = self.w.sqrt();
        let mut f = -q + m + self.mean / q;
        for i in 0..self.a.len() {
            f += self.weights[i]
                * (self.coef_a[i] / (m - self.a[i]) + self.coef_b[i] / (m - self.b[i]) + self.coef_c[i] / (m + self.c[i]));
        }
        f
    }

    /// Positive poles `{a_i} u {b_i}` ascending and negative poles `{c_i}` ascending.
    pub fn sorted_poles(&self) -> (Vec<f64>, Vec<f64>) {
        let mut pos: Vec<f64> = self.a.iter().chain(&self.b).copied().collect();
        pos.sort_by(f64::total_cmp);
        let mut neg = self.c.clone();
        neg.sort_by(f64::total_cmp);
        (pos, neg)
    }
}

fn real_cubic_roots(q: f64, s: f64, zeta: f64) -> Result<[f64; 3]> {
    let coeffs = [c(zeta * zeta, 0.0), c(-q * zeta, 0.0), c(-(s + zeta), 0.0), c(q, 0.0)];
    let found = companion_roots(&coeffs)?;
    let mut r: Vec<f64> = found.roots.iter().map(|z| z.re).collect();
    let width = found.roots.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let size = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if width > 1e-6 * size.max(1e-300) {
        return Err(Error::Numerical("cubic p_i has complex roots at real w".into()));
    }
    for x in r.iter_mut() {
        for _ in 0..4 {
            let (p, dp) = horner(&coeffs, c(*x, 0.0));
            if dp.re == 0.0 {
                break;
            }
            let step = p.re / dp.re;
            *x -= step;
            if step.abs() <= f64::EPSILON * x.abs() {
                break;
            }
        }
    }
    r.sort_by(|x, y| y.total_cmp(x));
    Ok([r[0], r[1], r[2]])
}

/// Factorizes each `p_i` at real `w > 0`, `|z| > 0`.
pub fn cubic_factorize(w: f64, z_mod: f64, spec: &SigmaSpectrum) -> Result<CubicFactorization> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::InvalidParameter(format!("cubic_factorize needs real w > 0, got {w}")));
    }
    if !(z_mod > 0.0) {
        return Err(Error::Degenerate("cubic_factorize needs |z| > 0".into()));
    }
    let q = w.sqrt();
    let zeta = z_mod * z_mod;
    let co = Coeffs::new(spec);
    let mut out = CubicFactorization {
        w,
        z_mod,
        a: vec![],
        b: vec![],
        c: vec![],
        coef_a: vec![],
        coef_b: vec![],
        coef_c: vec![],
        mean: co.ls.iter().sum(),
        weights: co.ls.clone(),
    };
    for &s in &co.s {
        let [a, b, negc] = real_cubic_roots(q, s, zeta)?;
        let cc = -negc;
        if !(a > b && b > 0.0 && cc > 0.0) {
            return Err(Error::Numerical(format!(
                "cubic roots ({a}, {b}, {negc}) not in the expected sign pattern"
            )));
        }
        let ap = (a * a - zeta) / (q * (a - b) * (a + cc));
        let bp = (b * b - zeta) / (q * (b - a) * (b + cc));
        let cp = (zeta - cc * cc) / (q * (cc + a) * (cc + b));
        out.a.push(a);
        out.b.push(b);
        out.c.push(cc);
        out.coef_a.push(ap * a);
        out.coef_b.push(bp * b);
        out.coef_c.push(cp * cc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_form_at_zero_z() {
        let spec = SigmaSpectrum::identity(4);
        let p = SpectralParameter::new(c(2.0, 0.3), 0.0).unwrap();
        let m = c(0.4, 0.9);
        let f = eval_f(&p, m, &spec).unwrap();
        let q = p.sqrt_w;
        let expect = -q + m + m / (q * m - 1.0);
        assert!((f - expect).norm() < 1e-14);
    }

    #[test]
    fn m2_direct_arithmetic() {
        let p = SpectralParameter::new(c(0.0, 1.0), 0.0).unwrap();
        // 1/m2 = -i (1 + i) = 1 - i
        let m2 = m2_from_m1(c(0.0, 1.0), &p).unwrap();
        assert!((m2 - c(0.5, 0.5)).norm() < 1e-15);
        assert!(m2.im > 0.0 && (p.w * m2).im > 0.0);
    }

    #[test]
    fn branch_of_sqrt() {
        assert_eq!(sqrt_branch(c(4.0, 0.0)), c(2.0, 0.0));
        assert!(sqrt_branch(c(-4.0, 0.0)).im > 0.0);
        assert!(sqrt_branch(c(-4.0, 1e-12)).im > 0.0);
        assert!(sqrt_branch(c(3.0, 1e-3)).im > 0.0);
    }

    #[test]
    fn polynomial_degrees() {
        let p = SpectralParameter::new(c(1.0, 0.5), 1.5).unwrap();
        assert_eq!(build_polynomial(&p, &SigmaSpectrum::identity(2)).unwrap().len(), 5);
        assert_eq!(build_polynomial(&p, &SigmaSpectrum::bimodal(2)).unwrap().len(), 8);
        let p0 = SpectralParameter::new(c(1.0, 0.5), 0.0).unwrap();
        assert_eq!(build_polynomial(&p0, &SigmaSpectrum::bimodal(2)).unwrap().len(), 4);
    }

    #[test]
    fn richardson_is_exact_for_quadratics() {
        let f = |h: f64| 0.3 + 2.0 * h - 5.0 * h * h;
        let (v, _) = richardson3(&[f(0.1), f(0.05), f(0.025)]);
        assert!((v - 0.3).abs() < 1e-14);
    }
}
