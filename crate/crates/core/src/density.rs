//! Tabulated singular-value density, classical locations, the log-potential
//! `U(|z|) = int log x rho_2c(x, z) dx` and the radial eigenvalue density
//! of `TX` derived from it.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::master::{MasterSolver, SolverOptions, DEFAULT_ETA0};
use crate::par;
use crate::quadrature::{graded_breaks, legendre_values, GaussRule};
use crate::sigma::{check_z_band, SigmaSpectrum};
use crate::support::SupportProfile;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DensityOptions {
    /// Approximate number of nodes over all bands.
    pub resolution: usize,
    /// Gauss-Legendre order per panel.
    pub order: usize,
    pub eta0: f64,
    /// Geometric refinement toward a hard edge at 0.
    pub grade_levels: usize,
    pub grade_ratio: f64,
    /// Allowed `|mass - 1|` before the table is rejected.
    pub mass_tolerance: f64,
    pub solver: SolverOptions,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            resolution: 2000,
            order: 64,
            eta0: DEFAULT_ETA0,
            grade_levels: 12,
            grade_ratio: 0.25,
            mass_tolerance: 1e-3,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DensityNode {
    pub x: f64,
    pub rho2: f64,
    pub rho1: f64,
    /// Quadrature weight in `x` (includes the map's Jacobian).
    pub weight: f64,
}

/// One panel `[theta_lo, theta_hi]` of the map `x = c - h cos(theta)`.
#[derive(Clone, Debug, Serialize)]
pub struct DensityPanel {
    pub band: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// First node index of this panel.
    pub start: usize,
    /// Legendre coefficients of `rho_2c(x(theta)) dx/dtheta` on the panel.
    #[serde(skip)]
    coeffs: Vec<f64>,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityTable {
    pub z_mod: f64,
    /// `[lo, hi]` ascending.
    pub bands: Vec<[f64; 2]>,
    pub nodes: Vec<DensityNode>,
    pub panels: Vec<DensityPanel>,
    pub total_mass: f64,
    pub total_mass_rho1: f64,
    /// Estimate of the mass quadrature error from trailing Legendre coefficients.
    pub error_estimate: f64,
    pub order: usize,
}

fn band_map(band: [f64; 2], theta: f64) -> (f64, f64) {
    // half-angle forms keep x - lo and hi - x accurate near the ends
    let h = 0.5 * (band[1] - band[0]);
    let x = if theta <= 0.5 * PI {
        band[0] + 2.0 * h * (0.5 * theta).sin().powi(2)
    } else {
        band[1] - 2.0 * h * (0.5 * theta).cos().powi(2)
    };
    (x, h * theta.sin())
}

fn band_theta(band: [f64; 2], x: f64) -> f64 {
    let h = 0.5 * (band[1] - band[0]);
    let c = 0.5 * (band[0] + band[1]);
    if x <= c {
        2.0 * (((x - band[0]) / (2.0 * h)).clamp(0.0, 1.0).sqrt()).asin()
    } else {
        PI - 2.0 * (((band[1] - x) / (2.0 * h)).clamp(0.0, 1.0).sqrt()).asin()
    }
}

fn panel_breaks(per_half: usize, zero_edge: bool, levels: usize, ratio: f64) -> Vec<f64> {
    let step = 0.5 * PI / per_half as f64;
    let mut breaks: Vec<f64> = if zero_edge && levels > 0 {
        graded_breaks(step, levels, ratio, 1)
    } else {
        vec![0.0, step]
    };
    for k in 2..=2 * per_half {
        breaks.push(step * k as f64);
    }
    *breaks.last_mut().unwrap() = PI;
    breaks
}

/// Tabulates `rho_1c` and `rho_2c` on every band of `profile`.
pub fn tabulate_density(spec: &SigmaSpectrum, profile: &SupportProfile, opts: &DensityOptions) -> Result<DensityTable> {
    let solver = MasterSolver::new(spec, profile.z_mod, opts.solver)?;
    let rule = GaussRule::new(opts.order);
    let mut bands: Vec<[f64; 2]> = profile.bands.clone();
    bands.reverse();
    let nb = bands.len().max(1);
    let per_half = opts.resolution.div_ceil(2 * nb * opts.order).max(1);

    let mut panels = Vec::new();
    let mut samples: Vec<(usize, f64, f64, f64)> = Vec::new(); // (band, theta, dtheta weight, jac)
    for (bi, &band) in bands.iter().enumerate() {
        let breaks = panel_breaks(per_half, band[0] == 0.0, opts.grade_levels, opts.grade_ratio);
        for win in breaks.windows(2) {
            let (a, b) = (win[0], win[1]);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            panels.push(DensityPanel {
                band: bi,
                theta_lo: a,
                theta_hi: b,
                start: samples.len(),
                coeffs: Vec::new(),
                mass: 0.0,
            });
            for (s, w) in rule.nodes.iter().zip(&rule.weights) {
                let theta = mid + half * s;
                let (_, jac) = band_map(band, theta);
                samples.push((bi, theta, w * half, jac));
            }
        }
    }

    let evals: Vec<Result<DensityNode>> = par::map_slice(&samples, |&(bi, theta, wt, jac)| {
        let band = bands[bi];
        let (x, _) = band_map(band, theta);
        let dist = (x - band[0]).min(band[1] - x).max(f64::MIN_POSITIVE);
        let eta = opts.eta0.min(1e-3 * dist);
        let d = solver.density_at(x, eta)?;
        Ok(DensityNode {
            x,
            rho2: d.rho2,
            rho1: d.rho1,
            weight: wt * jac,
        })
    });
    let nodes: Vec<DensityNode> = evals.into_iter().collect::<Result<_>>()?;

    let n = opts.order;
    let mut error_estimate = 0.0;
    for panel in panels.iter_mut() {
        let band = bands[panel.band];
        let g: Vec<f64> = (0..n)
            .map(|j| {
                let node = &nodes[panel.start + j];
                let theta = 0.5 * (panel.theta_lo + panel.theta_hi) + 0.5 * (panel.theta_hi - panel.theta_lo) * rule.nodes[j];
                node.rho2 * band_map(band, theta).1
            })
            .collect();
        panel.coeffs = rule.expansion(&g);
        let half = 0.5 * (panel.theta_hi - panel.theta_lo);
        panel.mass = 2.0 * half * panel.coeffs[0];
        let tail: f64 = panel.coeffs[n.saturating_sub(3)..].iter().map(|a| a.abs()).sum();
        error_estimate += 2.0 * half * tail;
    }
    let total_mass: f64 = nodes.iter().map(|nd| nd.rho2 * nd.weight).sum();
    let total_mass_rho1: f64 = nodes.iter().map(|nd| nd.rho1 * nd.weight).sum();
    if (total_mass - 1.0).abs() > opts.mass_tolerance {
        return Err(Error::MassDeficit { mass: total_mass });
    }
    Ok(DensityTable {
        z_mod: profile.z_mod,
        bands,
        nodes,
        panels,
        total_mass,
        total_mass_rho1,
        error_estimate,
        order: n,
    })
}

impl DensityTable {
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let bi = self.bands.iter().position(|b| x >= b[0] && x <= b[1])?;
        let theta = band_theta(self.bands[bi], x);
        let pi = self
            .panels
            .iter()
            .position(|p| p.band == bi && theta >= p.theta_lo && theta <= p.theta_hi)?;
        Some((pi, theta))
    }

    fn local(panel: &DensityPanel, theta: f64) -> f64 {
        let half = 0.5 * (panel.theta_hi - panel.theta_lo);
        ((theta - 0.5 * (panel.theta_hi + panel.theta_lo)) / half).clamp(-1.0, 1.0)
    }

    /// `rho_2c(x)` from the panel expansions (0 outside the bands).
    pub fn rho2_at(&self, x: f64) -> f64 {
        let Some((pi, theta)) = self.locate(x) else { return 0.0 };
        let panel = &self.panels[pi];
        let mut p = vec![0.0; panel.coeffs.len()];
        legendre_values(Self::local(panel, theta), &mut p);
        let g: f64 = panel.coeffs.iter().zip(&p).map(|(a, b)| a * b).sum();
        let jac = band_map(self.bands[panel.band], theta).1;
        if jac > 0.0 {
            (g / jac).max(0.0)
        } else {
            0.0
        }
    }

    /// `int_0^x rho_2c`, unnormalized.
    pub fn cumulative(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for panel in &self.panels {
            let band = self.bands[panel.band];
            if x >= band[1] || band_map(band, panel.theta_hi).0 <= x {
                total += panel.mass;
                continue;
            }
            if x > band[0] {
                let theta = band_theta(band, x);
                if theta > panel.theta_lo && theta < panel.theta_hi {
                    let half = 0.5 * (panel.theta_hi - panel.theta_lo);
                    total += half * GaussRule::partial_integral(&panel.coeffs, Self::local(panel, theta));
                }
            }
        }
        total
    }

    /// Normalized CDF `int_0^x rho_2c / mass`.
    pub fn cdf(&self, x: f64) -> f64 {
        (self.cumulative(x) / self.total_mass).clamp(0.0, 1.0)
    }

    /// `(int rho_1c(x)/(x - w) dx, int rho_2c(x)/(x - w) dx)` from the nodes.
    pub fn stieltjes(&self, w: Complex64) -> (Complex64, Complex64) {
        let mut m1 = Complex64::new(0.0, 0.0);
        let mut m2 = Complex64::new(0.0, 0.0);
        for nd in &self.nodes {
            let k = nd.weight / (nd.x - w);
            m1 += nd.rho1 * k;
            m2 += nd.rho2 * k;
        }
        (m1, m2)
    }

    /// `int log x rho_2c dx` with an error estimate from the panel expansions.
    pub fn log_potential(&self) -> LogPotential {
        let rule = GaussRule::new(self.order);
        let mut value = 0.0;
        let mut err = 0.0;
        for panel in &self.panels {
            let band = self.bands[panel.band];
            let half = 0.5 * (panel.theta_hi - panel.theta_lo);
            let mid = 0.5 * (panel.theta_hi + panel.theta_lo);
            let g: Vec<f64> = (0..self.order)
                .map(|j| {
                    let nd = &self.nodes[panel.start + j];
                    let jac = band_map(band, mid + half * rule.nodes[j]).1;
                    nd.x.ln() * nd.rho2 * jac
                })
                .collect();
            let a = rule.expansion(&g);
            value += 2.0 * half * a[0];
            err += 2.0 * half * a[self.order.saturating_sub(3)..].iter().map(|x| x.abs()).sum::<f64>();
        }
        LogPotential {
            value,
            error_estimate: err,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,rho2c\n");
        for nd in &self.nodes {
            let _ = writeln!(out, "{:.17e},{:.17e}", nd.x, nd.rho2);
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuantileTable {
    pub n: usize,
    pub gamma: Vec<f64>,
    /// Quantiles target `j/N` of the table mass; this is that mass.
    pub mass: f64,
}

impl QuantileTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,gamma_j\n");
        for (j, g) in self.gamma.iter().enumerate() {
            let _ = writeln!(out, "{},{:.17e}", j + 1, g);
        }
        out
    }
}

/// Classical locations `gamma_j` with `int_0^{gamma_j} rho_2c = j/N`.
///
/// Targets are scaled by the tabulated mass so `gamma_N` is the top edge.
pub fn quantiles(table: &DensityTable, n: usize) -> Result<QuantileTable> {
    if n == 0 {
        return Err(Error::InvalidParameter("quantiles need N >= 1".into()));
    }
    if table.panels.is_empty() {
        return Err(Error::Degenerate("empty density table".into()));
    }
    let mut cum = Vec::with_capacity(table.panels.len() + 1);
    cum.push(0.0);
    for p in &table.panels {
        cum.push(cum.last().unwrap() + p.mass);
    }
    let mass = *cum.last().unwrap();
    let gamma: Vec<f64> = par::map_indices(n, |idx| {
        if idx + 1 == n {
            return table.bands.last().unwrap()[1];
        }
        let target = mass * (idx + 1) as f64 / n as f64;
        let pi = match cum[1..].iter().position(|&c| c >= target) {
            Some(i) => i,
            None => table.panels.len() - 1,
        };
        let panel = &table.panels[pi];
        let band = table.bands[panel.band];
        let half = 0.5 * (panel.theta_hi - panel.theta_lo);
        let want = target - cum[pi];
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        if want >= panel.mass {
            lo = 1.0;
            hi = 1.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if half * GaussRule::partial_integral(&panel.coeffs, mid) < want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        band_map(band, 0.5 * (panel.theta_hi + panel.theta_lo) + half * s).0
    });
    let mut gamma = gamma;
    for j in 1..gamma.len() {
        if gamma[j] < gamma[j - 1] {
            gamma[j] = gamma[j - 1];
        }
    }
    Ok(QuantileTable { n, gamma, mass })
}

// ---------------------------------------------------------------------------
// Log-potential and radial profile

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LogPotential {
    pub value: f64,
    pub error_estimate: f64,
}

/// `int log x rho_2c(x) dx` through `int_0^inf [1/(1+y) - m_2c(-y)] dy`.
///
/// Uses `y = v^2` on `[0, 1]` and `y = 1/u^2` beyond, with panels graded
/// toward `v = 0` and `u = 0`. The error estimate is the difference
/// against a half-order rule.
pub fn log_potential(spec: &SigmaSpectrum, z_mod: f64, solver_opts: SolverOptions) -> Result<LogPotential> {
    let solver = MasterSolver::new(spec, z_mod, solver_opts)?;
    let hi = NegativeAxisRule::new(48);
    let lo = NegativeAxisRule::new(24);
    let a = hi.integrate(&solver)?;
    let b = lo.integrate(&solver)?;
    Ok(LogPotential {
        value: a,
        error_estimate: (a - b).abs(),
    })
}

/// Fixed nodes for the negative-axis integral, reusable across `|z|`.
#[derive(Clone, Debug)]
pub struct NegativeAxisRule {
    /// `(y, weight, inner)`: the integrand is `w [1/(1+y) - m_2(-y)]`.
    nodes: Vec<(f64, f64)>,
}

impl NegativeAxisRule {
    pub fn new(order: usize) -> Self {
        let rule = GaussRule::new(order);
        let mut breaks = graded_breaks(1.0, 16, 0.35, 4);
        breaks.dedup();
        let mut nodes = Vec::new();
        for win in breaks.windows(2) {
            let half = 0.5 * (win[1] - win[0]);
            let mid = 0.5 * (win[1] + win[0]);
            for (s, w) in rule.nodes.iter().zip(&rule.weights) {
                let t = mid + half * s;
                // inner part: y = t^2, dy = 2t dt
                nodes.push((t * t, w * half * 2.0 * t));
                // outer part: y = 1/t^2, dy = 2/t^3 dt
                nodes.push((1.0 / (t * t), w * half * 2.0 / (t * t * t)));
            }
        }
        Self { nodes }
    }

    pub fn integrate(&self, solver: &MasterSolver) -> Result<f64> {
        let mut total = 0.0;
        for &(y, w) in &self.nodes {
            let (_, m2) = solver.negative_axis(y)?;
            total += w * (1.0 / (1.0 + y) - m2);
        }
        Ok(total)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RadialPoint {
    pub r: f64,
    /// `None` inside the excluded band.
    pub u: Option<f64>,
    pub chi: Option<f64>,
    /// Radial CDF `(r/2) U'(r)`.
    pub f: Option<f64>,
    /// Five-point and wide three-point second differences disagree.
    pub kink: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialProfile {
    pub h: f64,
    pub z_band_min: f64,
    pub points: Vec<RadialPoint>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RadialOptions {
    /// Finite-difference step.
    pub h: f64,
    pub z_band_min: f64,
    pub order: usize,
}

impl Default for RadialOptions {
    fn default() -> Self {
        Self {
            h: 0.005,
            z_band_min: 0.05,
            order: 48,
        }
    }
}

/// `r_min, r_min + step, ...` up to `r_max`.
pub fn radial_grid(r_min: f64, r_max: f64, step: f64) -> Vec<f64> {
    let n = ((r_max - r_min) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| r_min + step * k as f64).collect()
}

/// `U`, `chi~ = (U'' + U'/r)/4` and `F = (r/2) U'` on `r_grid`.
pub fn chi_tilde(spec: &SigmaSpectrum, r_grid: &[f64], opts: &RadialOptions) -> Result<RadialProfile> {
    let rule = NegativeAxisRule::new(opts.order);
    let h = opts.h;
    let u_at = |r: f64| -> Result<f64> {
        let solver = MasterSolver::new(spec, r, SolverOptions::diagnostic())?;
        rule.integrate(&solver)
    };
    let in_band = |r: f64| check_z_band(r.abs(), opts.z_band_min).is_err();
    let points: Vec<Result<RadialPoint>> = par::map_slice(r_grid, |&r| {
        if !(r >= 0.0) {
            return Err(Error::InvalidParameter(format!("radius {r} < 0")));
        }
        if in_band(r) {
            return Ok(RadialPoint {
                r,
                u: None,
                chi: None,
                f: None,
                kink: false,
            });
        }
        let u0 = u_at(r)?;
        let stencil_ok = r - 2.0 * h > 0.0 && [-2.0, -1.0, 1.0, 2.0].iter().all(|k| !in_band(r + k * h));
        if !stencil_ok {
            return Ok(RadialPoint {
                r,
                u: Some(u0),
                chi: None,
                f: None,
                kink: false,
            });
        }
        let um2 = u_at(r - 2.0 * h)?;
        let um1 = u_at(r - h)?;
        let up1 = u_at(r + h)?;
        let up2 = u_at(r + 2.0 * h)?;
        let d1 = (um2 - 8.0 * um1 + 8.0 * up1 - up2) / (12.0 * h);
        let d2 = (-um2 + 16.0 * um1 - 30.0 * u0 + 16.0 * up1 - up2) / (12.0 * h * h);
        let d2_wide = (um2 - 2.0 * u0 + up2) / (4.0 * h * h);
        let chi = 0.25 * (d2 + d1 / r);
        Ok(RadialPoint {
            r,
            u: Some(u0),
            chi: Some(chi),
            f: Some(0.5 * r * d1),
            kink: (d2 - d2_wide).abs() > 0.1 * (1.0 + d2.abs()),
        })
    });
    Ok(RadialProfile {
        h,
        z_band_min: opts.z_band_min,
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

impl RadialProfile {
    /// `2 int r chi~ dr` by the trapezoid rule on each run of resolved
    /// points. The run starting at the smallest radius is anchored at
    /// `chi~(r_0) r_0^2`; later runs (past the hole at `|z| = 1`) start
    /// from `F` at their first point.
    pub fn integrated_f(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.points.len()];
        let mut acc: Option<f64> = None;
        let mut prev: Option<(f64, f64)> = None;
        let mut first_run = true;
        for (i, p) in self.points.iter().enumerate() {
            match p.chi {
                Some(chi) => {
                    let val = match (acc, prev) {
                        (Some(a), Some((r0, c0))) => a + (p.r - r0) * (r0 * c0 + p.r * chi),
                        _ if first_run => chi * p.r * p.r,
                        _ => p.f.unwrap_or(0.0),
                    };
                    acc = Some(val);
                    prev = Some((p.r, chi));
                    out[i] = Some(val);
                }
                None => {
                    if acc.is_some() {
                        first_run = false;
                    }
                    acc = None;
                    prev = None;
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        let mut out = String::from("r,U,chi,F\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.6},{},{},{}", p.r, cell(p.u), cell(p.chi), cell(p.f));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Stieltjes consistency

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StieltjesCheck {
    pub re: f64,
    pub im: f64,
    pub rel_dev_m1: f64,
    pub rel_dev_m2: f64,
}

/// Compares the solver's `m_1c(w)`, `m_2c(w)` with the Stieltjes
/// transforms of the tabulated densities at each `w`. Fails when the table's
/// own error estimate exceeds `tolerance`.
pub fn verify_stieltjes(
    table: &DensityTable,
    spec: &SigmaSpectrum,
    points: &[Complex64],
    tolerance: f64,
    solver_opts: SolverOptions,
) -> Result<Vec<StieltjesCheck>> {
    if !(table.error_estimate <= tolerance) {
        return Err(Error::QuadratureTolerance {
            estimate: table.error_estimate,
            tolerance,
        });
    }
    let solver = MasterSolver::new(spec, table.z_mod, solver_opts)?;
    points
        .iter()
        .map(|&w| {
            let sol = solver.solve(w)?;
            let (t1, t2) = table.stieltjes(w);
            Ok(StieltjesCheck {
                re: w.re,
                im: w.im,
                rel_dev_m1: (t1 - sol.m1c).norm() / sol.m1c.norm(),
                rel_dev_m2: (t2 - sol.m2c).norm() / sol.m2c.norm(),
            })
        })
        .collect()
}

/// Largest relative deviation over both transforms.
pub fn max_deviation(checks: &[StieltjesCheck]) -> f64 {
    checks.iter().map(|c| c.rel_dev_m1.max(c.rel_dev_m2)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_map_roundtrip() {
        let band = [0.5, 3.0];
        for theta in [0.1, 1.0, 2.5] {
            let (x, _) = band_map(band, theta);
            assert!((band_theta(band, x) - theta).abs() < 1e-12);
        }
        assert_eq!(band_map(band, 0.0).0, 0.5);
    }

    #[test]
    fn breaks_cover_zero_to_pi() {
        let b = panel_breaks(4, true, 6, 0.25);
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), PI);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b.len(), 8 + 6 + 1);
    }

    #[test]
    fn radial_grid_endpoints() {
        let g = radial_grid(0.1, 2.0, 0.05);
        assert_eq!(g.len(), 39);
        assert!((g[38] - 2.0).abs() < 1e-12);
    }
}
