//! Support of the limiting densities: critical points of `m -> f(sqrt(w), m)`
//! at real `w`, band edges, and regularity diagnostics.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::companion_roots;
use crate::master::{cubic_factorize, critical_polynomial, Coeffs, MasterSolver, SolverOptions, DEFAULT_ETA0};
use crate::par;
use crate::sigma::SigmaSpectrum;

/// One critical point of `f(sqrt(w), .)` on the real line.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CriticalPoint {
    pub m: f64,
    /// Critical value `h = f(sqrt(w), m)`.
    pub h: f64,
    /// Index `k` of the interval `I_k`, from `-n` to `2n`.
    pub interval: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPointSet {
    pub w: f64,
    pub z_mod: f64,
    /// `{a_i} u {b_i}` ascending.
    pub poles_pos: Vec<f64>,
    /// `{c_i}` ascending; the poles themselves sit at `-c_i`.
    pub poles_neg: Vec<f64>,
    /// Sorted by location, rightmost first.
    pub points: Vec<CriticalPoint>,
    /// Count per interval, `occupancy[k + n]` for `I_k`.
    pub occupancy: Vec<usize>,
    /// Critical values descend with location.
    pub ordering_ok: bool,
    pub violations: Vec<String>,
}

impl CriticalPointSet {
    pub fn n_distinct(&self) -> usize {
        self.poles_neg.len()
    }

    /// True when `0` lies in `f(J(w))`, i.e. `w` is outside the support.
    pub fn zero_in_image(&self) -> bool {
        let pts = &self.points;
        if pts.is_empty() {
            return false;
        }
        if pts[0].h < 0.0 || pts[pts.len() - 1].h > 0.0 {
            return true;
        }
        // interior pairs: f increases between the two points of one interval
        let interior = &pts[1..pts.len() - 1];
        interior.chunks(2).any(|pair| {
            pair.len() == 2 && pair[0].interval == pair[1].interval && pair[1].h < 0.0 && 0.0 < pair[0].h
        })
    }
}

fn real_derivs(co: &Coeffs, q: f64, zeta: f64, m: f64) -> Result<(f64, f64, f64, f64, f64)> {
    let d = crate::master::f_derivs(co, Complex64::new(q, 0.0), zeta, Complex64::new(m, 0.0))?;
    Ok((d.f.re, d.f_m.re, d.f_q.re, d.f_mm.re, d.f_mq.re))
}

/// All poles of `f(sqrt(w), .)` on the real line, ascending.
fn real_poles(spec: &SigmaSpectrum, w: f64, z_mod: f64) -> Result<Vec<f64>> {
    if z_mod == 0.0 {
        let q = w.sqrt();
        let mut p: Vec<f64> = spec.s().iter().map(|s| s / q).collect();
        p.sort_by(f64::total_cmp);
        return Ok(p);
    }
    let fac = cubic_factorize(w, z_mod, spec)?;
    let (pos, neg) = fac.sorted_poles();
    let mut all: Vec<f64> = neg.iter().rev().map(|c| -c).collect();
    all.extend(pos);
    Ok(all)
}

fn pole_distance(poles: &[f64], m: f64) -> f64 {
    poles.iter().map(|p| (m - p).abs()).fold(f64::INFINITY, f64::min)
}

/// Critical points without the occupancy check; see [`critical_points`].
pub fn critical_points_unchecked(w: f64, spec: &SigmaSpectrum, z_mod: f64) -> Result<CriticalPointSet> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::InvalidParameter(format!("critical points need w > 0, got {w}")));
    }
    if !(z_mod > 0.0) {
        return Err(Error::Degenerate("critical points need |z| > 0".into()));
    }
    let co = Coeffs::new(spec);
    let q = w.sqrt();
    let zeta = z_mod * z_mod;
    let n = spec.n_distinct();
    let fac = cubic_factorize(w, z_mod, spec)?;
    let (poles_pos, poles_neg) = fac.sorted_poles();
    let poles = real_poles(spec, w, z_mod)?;

    let poly = critical_polynomial(&co, Complex64::new(q, 0.0), zeta);
    let roots = companion_roots(&poly)?;
    let mut found: Vec<f64> = Vec::new();
    for r in roots.roots {
        if r.im.abs() > 1e-6 * (1.0 + r.re.abs()) {
            continue;
        }
        let mut x = r.re;
        for _ in 0..30 {
            let Ok((_, fm, _, fmm, _)) = real_derivs(&co, q, zeta, x) else { break };
            if fmm == 0.0 {
                break;
            }
            let step = fm / fmm;
            x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
                break;
            }
        }
        if pole_distance(&poles, x) <= 1e-8 * (1.0 + x.abs()) {
            continue;
        }
        if found.iter().any(|y| (x - y).abs() <= 1e-9 * (1.0 + x.abs())) {
            continue;
        }
        found.push(x);
    }
    found.sort_by(|a, b| b.total_cmp(a));

    let mut occupancy = vec![0usize; 3 * n + 1];
    let mut points = Vec::with_capacity(found.len());
    for &m in &found {
        let below = poles.iter().filter(|&&p| p < m).count();
        let interval = below as i32 - n as i32;
        occupancy[below] += 1;
        let (h, ..) = real_derivs(&co, q, zeta, m)?;
        points.push(CriticalPoint { m, h, interval });
    }

    let mut violations = Vec::new();
    for (idx, &count) in occupancy.iter().enumerate() {
        let k = idx as i32 - n as i32;
        let ok = if idx == 0 || idx == 3 * n { count == 1 } else { count == 0 || count == 2 };
        if !ok {
            violations.push(format!("interval I_{k} holds {count} critical points"));
        }
    }
    let scale = points.iter().map(|p| p.h.abs()).fold(1.0, f64::max);
    let ordering_ok = points.windows(2).all(|p| p[0].h >= p[1].h - 1e-9 * scale);

    Ok(CriticalPointSet {
        w,
        z_mod,
        poles_pos,
        poles_neg,
        points,
        occupancy,
        ordering_ok,
        violations,
    })
}

/// Critical points of `m -> f(sqrt(w), m)` at real `w > 0`, classified by the
/// intervals between consecutive poles. Fails when the occupancy pattern
/// (one point in each unbounded interval, zero or two elsewhere) is violated.
pub fn critical_points(w: f64, spec: &SigmaSpectrum, z_mod: f64) -> Result<CriticalPointSet> {
    let set = critical_points_unchecked(w, spec, z_mod)?;
    if !set.violations.is_empty() {
        return Err(Error::Degenerate(format!("w = {w}: {}", set.violations.join("; "))));
    }
    Ok(set)
}

/// Support membership from critical values alone.
pub fn in_support_by_critical_values(e: f64, spec: &SigmaSpectrum, z_mod: f64) -> Result<bool> {
    Ok(!critical_points(e, spec, z_mod)?.zero_in_image())
}

// ---------------------------------------------------------------------------
// Edges

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSide {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EdgeInfo {
    pub e: f64,
    /// Real value of `m_c` at the edge.
    pub m_c: f64,
    /// `d^2 f / d m^2` at `(sqrt(e), m_c(e))`.
    pub d2f: f64,
    pub pole_distance: f64,
    pub regular: bool,
    pub side: EdgeSide,
    /// `|f|` and `|d f / d m|` after refinement.
    pub residual_f: f64,
    pub residual_fm: f64,
}

/// The hard edge at 0 when `|z| < 1`: `rho_1c(x) ~ amplitude x^{-1/2}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ZeroEdge {
    pub t: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SupportProfile {
    pub z_mod: f64,
    /// `[e_lo, e_hi]`, topmost band first.
    pub bands: Vec<[f64; 2]>,
    /// Nonzero edges, largest first.
    pub edges: Vec<EdgeInfo>,
    pub zero_edge: Option<ZeroEdge>,
    pub scan_points: usize,
    pub scan_min: f64,
    pub scan_max: f64,
    /// Ratio between consecutive scan points.
    pub grid_ratio: f64,
    pub epsilon: f64,
}

impl SupportProfile {
    pub fn lowest_edge(&self) -> f64 {
        self.bands.last().map_or(f64::NAN, |b| b[0])
    }

    pub fn top_edge(&self) -> f64 {
        self.bands.first().map_or(f64::NAN, |b| b[1])
    }

    pub fn contains(&self, x: f64) -> bool {
        self.bands.iter().any(|b| x >= b[0] && x <= b[1])
    }

    pub fn edge_values(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.e).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EdgeOptions {
    pub scan_points: usize,
    pub scan_min: f64,
    /// Defaults to `4 (s_1 + |z|^2 + 1)`.
    pub scan_max: Option<f64>,
    pub density_floor: f64,
    pub eta0: f64,
    /// Threshold used for the `regular` flag of each edge.
    pub epsilon: f64,
    pub bisection_width: f64,
    pub solver: SolverOptions,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        Self {
            scan_points: 2000,
            scan_min: 1e-6,
            scan_max: None,
            density_floor: 1e-5,
            eta0: DEFAULT_ETA0,
            epsilon: 1e-3,
            bisection_width: 1e-10,
            solver: SolverOptions::default(),
        }
    }
}

/// `rho_1c(e) > floor` at `eta0`.
pub fn support_indicator(e: f64, spec: &SigmaSpectrum, z_mod: f64, opts: &EdgeOptions) -> Result<bool> {
    let solver = MasterSolver::new(spec, z_mod, opts.solver)?;
    indicator(&solver, e, opts)
}

fn indicator(solver: &MasterSolver, e: f64, opts: &EdgeOptions) -> Result<bool> {
    Ok(solver.density_at(e, opts.eta0)?.rho1 > opts.density_floor)
}

/// Solves `f = d f / d m = 0` over real `(sqrt(w), m)` from `(e0, m0)`.
fn refine_edge(co: &Coeffs, zeta: f64, e0: f64, m0: f64) -> Result<(f64, f64)> {
    let mut q = e0.sqrt();
    let mut m = m0;
    for _ in 0..80 {
        let (f, fm, fq, fmm, fmq) = real_derivs(co, q, zeta, m)?;
        // [fq fm; fmq fmm] [dq; dm] = [f; fm]
        let det = fq * fmm - fm * fmq;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Numerical("singular Jacobian in edge refinement".into()));
        }
        let mut dq = (f * fmm - fm * fm) / det;
        let mut dm = (fq * fm - fmq * f) / det;
        if q - dq <= 0.0 {
            let damp = 0.5 * q / dq.abs();
            dq *= damp;
            dm *= damp;
        }
        q -= dq;
        m -= dm;
        if dq.abs() <= 4.0 * f64::EPSILON * q && dm.abs() <= 4.0 * f64::EPSILON * m.abs().max(1e-300) {
            break;
        }
    }
    let (f, fm, ..) = real_derivs(co, q, zeta, m)?;
    if !(f.abs() <= 1e-10 && fm.abs() <= 1e-8) {
        return Err(Error::NoConvergence {
            what: "edge refinement",
            iterations: 80,
        });
    }
    Ok((q * q, m))
}

fn bisect_indicator(solver: &MasterSolver, mut lo: f64, mut hi: f64, lo_in: bool, opts: &EdgeOptions) -> Result<f64> {
    while hi - lo > opts.bisection_width {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if indicator(solver, mid, opts)? == lo_in {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Locates the bands of `rho_1c` by scanning a log grid and refining each
/// transition to an exact edge.
pub fn find_edges(spec: &SigmaSpectrum, z_mod: f64, opts: &EdgeOptions) -> Result<SupportProfile> {
    match scan_edges(spec, z_mod, opts, opts.scan_points) {
        Err(Error::Bracketing(_)) => scan_edges(spec, z_mod, opts, 4 * opts.scan_points),
        other => other,
    }
}

fn scan_edges(spec: &SigmaSpectrum, z_mod: f64, opts: &EdgeOptions, points: usize) -> Result<SupportProfile> {
    let solver = MasterSolver::new(spec, z_mod, opts.solver)?;
    let co = Coeffs::new(spec);
    let zeta = z_mod * z_mod;
    let scan_max = opts.scan_max.unwrap_or(4.0 * (spec.s()[0] + zeta + 1.0));
    let lo = opts.scan_min;
    if !(points >= 2 && lo > 0.0 && scan_max > lo) {
        return Err(Error::InvalidParameter("scan grid needs two points and 0 < min < max".into()));
    }
    let ratio = (scan_max / lo).powf(1.0 / (points - 1) as f64);
    let grid: Vec<f64> = (0..points).map(|i| lo * ratio.powi(i as i32)).collect();
    let inside: Vec<bool> = par::map_slice(&grid, |&x| indicator(&solver, x, opts))
        .into_iter()
        .collect::<Result<_>>()?;
    if inside[points - 1] {
        return Err(Error::Bracketing(format!("density above floor at scan_max = {scan_max}")));
    }

    // transitions (index i: between grid[i] and grid[i + 1])
    let transitions: Vec<usize> = (0..points - 1).filter(|&i| inside[i] != inside[i + 1]).collect();
    let refined: Vec<Result<EdgeInfo>> = par::map_slice(&transitions, |&i| {
        let (a, b) = (grid[i], grid[i + 1]);
        let lower = !inside[i];
        let mid = bisect_indicator(&solver, a, b, inside[i], opts)?;
        let dens = solver.density_at(mid, opts.eta0)?;
        let (e, m) = refine_edge(&co, zeta, mid, dens.m_c.re)
            .map_err(|err| Error::Bracketing(format!("edge near {mid}: {err}")))?;
        if (e - mid).abs() > 1e-4 * (1.0 + mid) {
            return Err(Error::Bracketing(format!("edge near {mid} refined to {e}")));
        }
        edge_info(spec, &co, zeta, z_mod, e, m, if lower { EdgeSide::Lower } else { EdgeSide::Upper }, opts.epsilon)
    });
    let mut edges: Vec<EdgeInfo> = refined.into_iter().collect::<Result<_>>()?;

    let mut bands_asc: Vec<[f64; 2]> = Vec::new();
    let mut open = if inside[0] { Some(0.0) } else { None };
    for edge in &edges {
        match (edge.side, open) {
            (EdgeSide::Lower, None) => open = Some(edge.e),
            (EdgeSide::Upper, Some(start)) => {
                bands_asc.push([start, edge.e]);
                open = None;
            }
            _ => return Err(Error::Bracketing("edges do not alternate".into())),
        }
    }
    let zero_edge = if inside[0] {
        if zeta >= 1.0 {
            return Err(Error::Bracketing(format!("density above floor at scan_min = {lo} for |z| > 1")));
        }
        let t = small_w_t(spec, z_mod)?;
        Some(ZeroEdge {
            t,
            amplitude: t.sqrt() / std::f64::consts::PI,
        })
    } else {
        None
    };
    edges.reverse();
    bands_asc.reverse();
    Ok(SupportProfile {
        z_mod,
        bands: bands_asc,
        edges,
        zero_edge,
        scan_points: points,
        scan_min: lo,
        scan_max,
        grid_ratio: ratio,
        epsilon: opts.epsilon,
    })
}

#[allow(clippy::too_many_arguments)]
fn edge_info(
    spec: &SigmaSpectrum,
    co: &Coeffs,
    zeta: f64,
    z_mod: f64,
    e: f64,
    m: f64,
    side: EdgeSide,
    epsilon: f64,
) -> Result<EdgeInfo> {
    let (f, fm, _, fmm, _) = real_derivs(co, e.sqrt(), zeta, m)?;
    let poles = real_poles(spec, e, z_mod)?;
    let pole_distance = pole_distance(&poles, m);
    Ok(EdgeInfo {
        e,
        m_c: m,
        d2f: fmm,
        pole_distance,
        regular: pole_distance >= epsilon && fmm.abs() >= epsilon,
        side,
        residual_f: f.abs(),
        residual_fm: fm.abs(),
    })
}

// ---------------------------------------------------------------------------
// Regularity

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegularityReport {
    pub e: f64,
    pub epsilon: f64,
    pub pole_distance: f64,
    pub d2f_abs: f64,
    /// Distance to the nearest other edge (infinite if there is none).
    pub neighbor_gap: f64,
    pub pole_ok: bool,
    pub curvature_ok: bool,
    pub gap_ok: bool,
    pub regular: bool,
}

/// Edge regularity: distance to poles, curvature, and separation from
/// the other edges, each against `epsilon`.
pub fn check_edge_regularity(edge: &EdgeInfo, epsilon: f64, other_edges: &[f64]) -> RegularityReport {
    let neighbor_gap = other_edges
        .iter()
        .filter(|&&x| x != edge.e)
        .map(|x| (x - edge.e).abs())
        .fold(f64::INFINITY, f64::min);
    let pole_ok = edge.pole_distance >= epsilon;
    let curvature_ok = edge.d2f.abs() >= epsilon;
    let gap_ok = neighbor_gap >= epsilon;
    RegularityReport {
        e: edge.e,
        epsilon,
        pole_distance: edge.pole_distance,
        d2f_abs: edge.d2f.abs(),
        neighbor_gap,
        pole_ok,
        curvature_ok,
        gap_ok,
        regular: pole_ok && curvature_ok && gap_ok,
    }
}

impl SupportProfile {
    /// Regularity of every nonzero edge, largest first.
    pub fn regularity(&self, epsilon: f64) -> Vec<RegularityReport> {
        let all = self.edge_values();
        self.edges.iter().map(|e| check_edge_regularity(e, epsilon, &all)).collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BulkReport {
    pub lo: f64,
    pub hi: f64,
    pub tau_prime: f64,
    pub c: f64,
    pub min_rho1: f64,
    pub regular: bool,
}

/// Lower bound of `rho_1c` on `[lo + tau', hi - tau']` over 200 points.
pub fn check_bulk_regularity(
    band: [f64; 2],
    spec: &SigmaSpectrum,
    z_mod: f64,
    tau_prime: f64,
    c: f64,
    solver_opts: SolverOptions,
) -> Result<BulkReport> {
    let [lo, hi] = band;
    if !(hi - lo > 2.0 * tau_prime) {
        return Err(Error::InvalidParameter(format!(
            "band [{lo}, {hi}] too narrow for tau' = {tau_prime}"
        )));
    }
    let solver = MasterSolver::new(spec, z_mod, solver_opts)?;
    let a = lo + tau_prime;
    let b = hi - tau_prime;
    let vals: Vec<Result<f64>> = par::map_indices(200, |i| {
        let x = a + (b - a) * i as f64 / 199.0;
        Ok(solver.density_at(x, DEFAULT_ETA0)?.rho1)
    });
    let min_rho1 = vals.into_iter().collect::<Result<Vec<f64>>>()?.into_iter().fold(f64::INFINITY, f64::min);
    Ok(BulkReport {
        lo,
        hi,
        tau_prime,
        c,
        min_rho1,
        regular: min_rho1 >= c,
    })
}

/// Least-squares slope of `log rho_1c(x)` against `log |x - e|` over
/// `|x - e|` in `[1e-4, 1e-2]` (20 log-spaced points). Use `e = 0` with
/// `EdgeSide::Lower` for the hard edge at the origin.
pub fn edge_exponent_fit(e: f64, side: EdgeSide, spec: &SigmaSpectrum, z_mod: f64, solver_opts: SolverOptions) -> Result<f64> {
    let solver = MasterSolver::new(spec, z_mod, solver_opts)?;
    let pts: Vec<Result<(f64, f64)>> = par::map_indices(20, |i| {
        let delta = 1e-4 * 100f64.powf(i as f64 / 19.0);
        let x = match side {
            EdgeSide::Lower => e + delta,
            EdgeSide::Upper => e - delta,
        };
        let rho = solver.density_at(x, DEFAULT_ETA0)?.rho1;
        if !(rho > 0.0) {
            return Err(Error::Numerical(format!("zero density at {x} in exponent fit")));
        }
        Ok((delta.ln(), rho.ln()))
    });
    let pts = pts.into_iter().collect::<Result<Vec<_>>>()?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// The positive root `t` of
/// `(1/K) sum l_i (t + |z|^2 - s_i) / ((s_i + |z|^2) t + |z|^4) = 0`,
/// which fixes `m_c(w) ~ i sqrt(t)` as `w -> 0` when `|z| < 1`.
pub fn small_w_t(spec: &SigmaSpectrum, z_mod: f64) -> Result<f64> {
    let zeta = z_mod * z_mod;
    if !(zeta < 1.0) {
        return Err(Error::InvalidParameter(format!("small-w limit needs |z| < 1, got {z_mod}")));
    }
    let weights = spec.weights();
    let h = |t: f64| -> f64 {
        spec.s()
            .iter()
            .zip(&weights)
            .map(|(s, w)| w * (t + zeta - s) / ((s + zeta) * t + zeta * zeta))
            .sum()
    };
    let mut lo = 1e-300_f64.max(1e-16 * spec.harmonic_mean_t0());
    if h(lo) >= 0.0 {
        return Err(Error::Bracketing(format!("|z| = {z_mod} too close to 1 for the small-w root")));
    }
    let mut hi = spec.s()[0].max(1.0);
    while h(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Bracketing("small-w root not bracketed".into()));
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
