//! Monte Carlo ensembles of `TX` and the statistics comparing them with the
//! deterministic equivalents: averaged and entrywise local laws, rigidity,
//! extreme singular values, the local circular law and the radial ESD.
//!
//! Every run draws from its own ChaCha stream `(seed, run_index)`, so results
//! are identical whatever the number of worker threads.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{quantiles, DensityTable, RadialProfile};
use crate::error::{Error, Result};
use crate::linalg::{general_eigenvalues, qr_haar, spectral_norm_estimate, svd, symmetric_eigenvalues_owned, DenseMatrix};
use crate::master::{MasterSolver, SolverOptions};
use crate::par;
use crate::quadrature::GaussRule;
use crate::sigma::SigmaSpectrum;

/// `||Delta F||_{L^1}` for the bump `F(z) = (1 - |z|^2)^3`.
pub const BUMP_LAPLACIAN_L1: f64 = 32.0 * PI / 9.0;

/// Eigenvalues of modulus below this count as trivial zeros.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TMode {
    /// `T = (D, 0)` with `D = diag(sqrt(s_i))`.
    Diagonal,
    /// `T = U (D, 0) V` with Haar orthogonal `U`, `V`.
    Haar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XDist {
    Gauss,
    Rademacher,
    /// Two-point law on `{2, -1/2}` with probabilities `{1/5, 4/5}`;
    /// third moment `3/2` before scaling.
    Skewed,
}

impl FromStr for TMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(Self::Diagonal),
            "haar" | "haar-conjugated" => Ok(Self::Haar),
            _ => Err(Error::Parse(format!("unknown T mode '{s}'"))),
        }
    }
}

impl FromStr for XDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(Self::Gauss),
            "rademacher" => Ok(Self::Rademacher),
            "skewed" => Ok(Self::Skewed),
            _ => Err(Error::Parse(format!("unknown distribution '{s}'"))),
        }
    }
}

impl XDist {
    /// One entry with unit variance (before the `1/sqrt(K)` scaling).
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            XDist::Gauss => rng.sample(StandardNormal),
            XDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            XDist::Skewed => {
                if rng.random::<f64>() < 0.2 {
                    2.0
                } else {
                    -0.5
                }
            }
        }
    }

    /// `(E x^3, E x^4, E x^6)` of the unit-variance law.
    pub fn moments(self) -> (f64, f64, f64) {
        match self {
            XDist::Gauss => (0.0, 3.0, 15.0),
            XDist::Rademacher => (0.0, 1.0, 1.0),
            XDist::Skewed => (1.5, 0.2 * 16.0 + 0.8 / 16.0, 0.2 * 64.0 + 0.8 / 64.0),
        }
    }
}

/// A spectral parameter `z = modulus * e^{i phase}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZPoint {
    pub modulus: f64,
    pub phase: f64,
}

impl ZPoint {
    pub fn real(modulus: f64) -> Self {
        Self { modulus, phase: 0.0 }
    }

    pub fn value(&self) -> C64 {
        if self.phase == 0.0 {
            C64::new(self.modulus, 0.0)
        } else {
            C64::from_polar(self.modulus, self.phase)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub m: usize,
    pub spec: SigmaSpectrum,
    pub t_mode: TMode,
    pub x_dist: XDist,
    pub z_list: Vec<ZPoint>,
    pub runs: usize,
    pub seed: u64,
    /// Compute the eigenvalues of `TX` (the dominant cost per run).
    pub eigenvalues: bool,
}

impl EnsembleConfig {
    /// Gaussian entries, diagonal `T`, dimensions taken from `spec`.
    pub fn new(spec: SigmaSpectrum, z_list: Vec<ZPoint>, runs: usize, seed: u64) -> Self {
        Self {
            n: spec.n_rows(),
            m: spec.n_cols(),
            spec,
            t_mode: TMode::Diagonal,
            x_dist: XDist::Gauss,
            z_list,
            runs,
            seed,
            eigenvalues: true,
        }
    }

    pub fn k(&self) -> usize {
        self.n.min(self.m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != self.spec.n_rows() || self.m != self.spec.n_cols() {
            return Err(Error::InvalidParameter(format!(
                "ensemble is {}x{} but the spectrum describes {}x{}",
                self.n,
                self.m,
                self.spec.n_rows(),
                self.spec.n_cols()
            )));
        }
        if self.n == 0 || self.m == 0 || self.runs == 0 {
            return Err(Error::InvalidParameter("N, M and runs must be positive".into()));
        }
        if self.z_list.iter().any(|z| !(z.modulus >= 0.0) || !z.phase.is_finite()) {
            return Err(Error::InvalidParameter("z values must be finite with |z| >= 0".into()));
        }
        Ok(())
    }
}

/// Sample moments of the entries of `X`, scaled by `sqrt(K)` so that the
/// targets are those of the unit-variance law.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EntryMoments {
    pub count: usize,
    pub mean: f64,
    pub second: f64,
    pub third: f64,
}

impl EntryMoments {
    fn of(x: &DenseMatrix, k: usize) -> Self {
        let scale = (k as f64).sqrt();
        let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
        for &v in x.as_slice() {
            let u = v * scale;
            s1 += u;
            s2 += u * u;
            s3 += u * u * u;
        }
        let n = x.as_slice().len() as f64;
        Self {
            count: x.as_slice().len(),
            mean: s1 / n,
            second: s2 / n,
            third: s3 / n,
        }
    }

    /// Largest deviation from `(0, 1, E x^3)` in units of the standard error.
    pub fn max_sigma(&self, dist: XDist) -> f64 {
        let (m3, m4, m6) = dist.moments();
        let n = self.count as f64;
        let dev = |got: f64, want: f64, var: f64| {
            let d = (got - want).abs();
            if var <= 0.0 {
                if d <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                d / (var / n).sqrt()
            }
        };
        dev(self.mean, 0.0, 1.0)
            .max(dev(self.second, 1.0, m4 - 1.0))
            .max(dev(self.third, m3, m6 - m3 * m3))
    }
}

/// Squared singular values of `TX - z`, ascending.
#[derive(Clone, Debug)]
pub struct SingularSpectrum {
    pub z: ZPoint,
    pub lambda: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub run_index: usize,
    pub seed: u64,
    /// ChaCha stream number; equals `run_index`.
    pub stream: u64,
    /// Eigenvalues of `TX` sorted by (re, im); empty when not requested.
    pub eigenvalues: Vec<C64>,
    pub singular: Vec<SingularSpectrum>,
    /// Power-iteration estimate of `||X||`.
    pub x_norm: f64,
    pub moments: EntryMoments,
    pub seconds: f64,
}

impl RunResult {
    pub fn trivial_zero_count(&self) -> usize {
        self.eigenvalues.iter().filter(|m| m.norm() <= ZERO_EIGENVALUE_TOL).count()
    }

    /// Eigenvalues with the `N - K` smallest in modulus removed.
    pub fn nontrivial_eigenvalues(&self, k: usize) -> Vec<C64> {
        let drop = self.eigenvalues.len().saturating_sub(k);
        if drop == 0 {
            return self.eigenvalues.clone();
        }
        let mut v = self.eigenvalues.clone();
        v.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        v.split_off(drop)
    }
}

/// Matrices of one run.
pub struct Sample {
    /// `N x M`.
    pub t: DenseMatrix,
    /// `M x N`, entries of variance `1/K`.
    pub x: DenseMatrix,
    pub tx: DenseMatrix,
}

fn run_rng(seed: u64, run_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index as u64);
    rng
}

/// Draws `T` and `X` for run `run_index`. `X` is drawn first, so diagonal and
/// Haar ensembles with the same seed share it.
pub fn sample_matrices(cfg: &EnsembleConfig, run_index: usize) -> Sample {
    let mut rng = run_rng(cfg.seed, run_index);
    let (n, m, k) = (cfg.n, cfg.m, cfg.k());
    let scale = 1.0 / (k as f64).sqrt();
    let x = DenseMatrix::from_fn(m, n, |_, _| cfg.x_dist.draw(&mut rng) * scale);
    let d = cfg.spec.singular_values();
    match cfg.t_mode {
        TMode::Diagonal => {
            let mut t = DenseMatrix::zeros(n, m);
            let mut tx = DenseMatrix::zeros(n, n);
            for (i, &di) in d.iter().enumerate() {
                t[(i, i)] = di;
                for (o, &v) in tx.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o = di * v;
                }
            }
            Sample { t, x, tx }
        }
        TMode::Haar => {
            let u = qr_haar(n, &mut rng);
            let v = qr_haar(m, &mut rng);
            let mut dv = DenseMatrix::zeros(n, m);
            for (i, &di) in d.iter().enumerate() {
                for (o, &a) in dv.row_mut(i).iter_mut().zip(v.row(i)) {
                    *o = di * a;
                }
            }
            let t = u.matmul(&dv);
            let tx = t.matmul(&x);
            Sample { t, x, tx }
        }
    }
}

/// Eigenvalues of `(A - z)(A - z)^*`, ascending and clamped at 0. A complex
/// `z` goes through the real `2N x 2N` embedding, whose spectrum is the
/// Hermitian one doubled.
pub fn singular_spectrum(a: &DenseMatrix, z: C64) -> Result<Vec<f64>> {
    let n = a.rows();
    if z.im == 0.0 {
        let mut y = a.clone();
        for i in 0..n {
            y[(i, i)] -= z.re;
        }
        let mut lam = symmetric_eigenvalues_owned(y.gram_rows())?;
        lam.iter_mut().for_each(|l| *l = l.max(0.0));
        return Ok(lam);
    }
    let mut e = DenseMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            e[(i, j)] = a[(i, j)];
            e[(i + n, j + n)] = a[(i, j)];
        }
        e[(i, i)] -= z.re;
        e[(i + n, i + n)] -= z.re;
        // imaginary part of Y is -z.im I
        e[(i, i + n)] = z.im;
        e[(i + n, i)] = -z.im;
    }
    let lam = symmetric_eigenvalues_owned(e.gram_rows())?;
    Ok(lam.chunks(2).map(|p| (0.5 * (p[0] + p[1])).max(0.0)).collect())
}

/// One run: spectra of `TX` and of `(TX - z)(TX - z)^*` for every `z`.
pub fn sample_run(cfg: &EnsembleConfig, run_index: usize) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let s = sample_matrices(cfg, run_index);
    let eigenvalues = if cfg.eigenvalues {
        general_eigenvalues(&s.tx)?
    } else {
        Vec::new()
    };
    let singular = cfg
        .z_list
        .iter()
        .map(|&z| {
            Ok(SingularSpectrum {
                z,
                lambda: singular_spectrum(&s.tx, z.value())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult {
        run_index,
        seed: cfg.seed,
        stream: run_index as u64,
        eigenvalues,
        singular,
        x_norm: spectral_norm_estimate(&s.x, 100),
        moments: EntryMoments::of(&s.x, cfg.k()),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub config: EnsembleConfig,
    /// Successful runs in run order.
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

/// Runs all `cfg.runs` runs, in parallel when available. Failed runs are
/// excluded and listed in `failures`.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let results = par::map_indices(cfg.runs, |r| sample_run(cfg, r));
    let mut runs = Vec::with_capacity(cfg.runs);
    let mut failures = Vec::new();
    for (run_index, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(RunFailure {
                run_index,
                message: e.to_string(),
            }),
        }
    }
    Ok(EnsembleResult {
        config: cfg.clone(),
        runs,
        failures,
    })
}

impl EnsembleResult {
    pub fn success_fraction(&self) -> f64 {
        self.runs.len() as f64 / self.config.runs as f64
    }

    /// Errors unless at least `min_fraction` of the runs succeeded.
    pub fn require_success(&self, min_fraction: f64) -> Result<()> {
        if self.success_fraction() < min_fraction {
            return Err(Error::Numerical(format!(
                "{} of {} runs failed",
                self.failures.len(),
                self.config.runs
            )));
        }
        Ok(())
    }

    fn z_point(&self, z_index: usize) -> Result<ZPoint> {
        self.config
            .z_list
            .get(z_index)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("no z with index {z_index}")))
    }

    fn spectra(&self, z_index: usize) -> impl Iterator<Item = &[f64]> {
        self.runs.iter().map(move |r| r.singular[z_index].lambda.as_slice())
    }

    /// CSV `run,z_mod,phase,j,lambda` of all singular spectra.
    pub fn singular_csv(&self) -> String {
        let mut out = String::from("run,z_mod,phase,j,lambda\n");
        for r in &self.runs {
            for sp in &r.singular {
                for (j, l) in sp.lambda.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{},{:.17e}", r.run_index, sp.z.modulus, sp.z.phase, j + 1, l);
                }
            }
        }
        out
    }

    /// CSV `run,re,im` of the eigenvalues of `TX`.
    pub fn eigenvalue_csv(&self) -> String {
        let mut out = String::from("run,re,im\n");
        for r in &self.runs {
            for mu in &r.eigenvalues {
                let _ = writeln!(out, "{},{:.17e},{:.17e}", r.run_index, mu.re, mu.im);
            }
        }
        out
    }
}

/// Order statistics of a per-run quantity.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub median: f64,
    pub p90: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return Self {
                runs: 0,
                median: f64::NAN,
                p90: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let p90 = v[((0.9 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            runs: n,
            median,
            p90,
            min: v[0],
            max: v[n - 1],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AveragedLawPoint {
    pub eta: f64,
    pub m2c: [f64; 2],
    /// `N eta |m_2 - m_2c|` over runs.
    pub stat: Summary,
}

#[derive(Clone, Debug, Serialize)]
pub struct AveragedLawProfile {
    pub z_mod: f64,
    pub e: f64,
    pub in_support: bool,
    pub points: Vec<AveragedLawPoint>,
}

impl AveragedLawProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,median,p90,runs\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.17e},{:.17e},{:.17e},{}", p.eta, p.stat.median, p.stat.p90, p.stat.runs);
        }
        out
    }
}

/// Empirical `m_2(w) = (1/N) sum_j 1/(lambda_j - w)`.
pub fn empirical_m2(lambda: &[f64], w: C64) -> C64 {
    lambda.iter().map(|&l| 1.0 / (l - w)).sum::<C64>() / lambda.len() as f64
}

/// `N eta |m_2 - m_2c|` at `w = e + i eta` for each `eta`. The grid must lie
/// in `(1/N, 1]`.
pub fn averaged_law_profile(
    ens: &EnsembleResult,
    z_index: usize,
    e: f64,
    etas: &[f64],
    solver_opts: SolverOptions,
) -> Result<AveragedLawProfile> {
    let z = ens.z_point(z_index)?;
    let n = ens.config.n as f64;
    if let Some(eta) = etas.iter().find(|&&eta| !(eta > 1.0 / n && eta <= 1.0)) {
        return Err(Error::InvalidParameter(format!("eta = {eta} outside (1/N, 1]")));
    }
    let solver = MasterSolver::new(&ens.config.spec, z.modulus, solver_opts)?;
    let in_support = e > 0.0 && solver.density_at(e, 1e-7).map(|d| d.rho2 > 1e-6).unwrap_or(false);
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let w = C64::new(e, eta);
        let m2c = solver.solve(w)?.m2c;
        let stats: Vec<f64> = ens.spectra(z_index).map(|l| n * eta * (empirical_m2(l, w) - m2c).norm()).collect();
        points.push(AveragedLawPoint {
            eta,
            m2c: [m2c.re, m2c.im],
            stat: Summary::of(&stats),
        });
    }
    Ok(AveragedLawProfile {
        z_mod: z.modulus,
        e,
        in_support,
        points,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EntrywiseReport {
    pub w: [f64; 2],
    pub psi: f64,
    /// `max_ij ||(G - Pi)_[ij]||` per run.
    pub max_deviation: Vec<f64>,
    /// `max_ij ||(G - Pi)_[ij]|| / Psi` per run.
    pub ratio: Vec<f64>,
    /// `max |<v, (G - Pi) v>| / Psi` over random unit vectors, per run.
    pub probe_ratio: Vec<f64>,
    /// `max_i ||pi_[i]c|| |w|^{1/2}`.
    pub pi_scaled: f64,
    pub summary: Summary,
}

/// Spectral norm of a complex 2x2 matrix.
fn norm2x2(a: [[C64; 2]; 2]) -> f64 {
    let f = a.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>();
    let det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).norm_sqr();
    (0.5 * (f + (f * f - 4.0 * det).max(0.0).sqrt())).sqrt()
}

fn inv2x2(a: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

/// `U diag(c) W^T` split into real and imaginary parts.
fn scaled_product(u: &DenseMatrix, c: &[C64], w: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let wt = w.transpose();
    let mut ure = u.clone();
    let mut uim = u.clone();
    for i in 0..u.rows() {
        for (k, ck) in c.iter().enumerate() {
            ure[(i, k)] *= ck.re;
            uim[(i, k)] *= ck.im;
        }
    }
    (ure.matmul(&wt), uim.matmul(&wt))
}

/// Entrywise comparison of the resolvent `G(w)` of the linearized `2N x 2N`
/// matrix with its deterministic limit `Pi(w)`. Requires `N = M`, diagonal
/// `T` and a real `z`.
pub fn entrywise_law_check(
    cfg: &EnsembleConfig,
    z_index: usize,
    w: C64,
    probes: usize,
    solver_opts: SolverOptions,
) -> Result<EntrywiseReport> {
    cfg.validate()?;
    if cfg.n != cfg.m || cfg.t_mode != TMode::Diagonal {
        return Err(Error::InvalidParameter("entrywise check needs N = M and diagonal T".into()));
    }
    let z = cfg
        .z_list
        .get(z_index)
        .ok_or_else(|| Error::InvalidParameter(format!("no z with index {z_index}")))?
        .value();
    if z.im != 0.0 {
        return Err(Error::InvalidParameter("entrywise check needs a real z".into()));
    }
    let n = cfg.n;
    let eta = w.im;
    let sol = MasterSolver::new(&cfg.spec, z.norm(), solver_opts)?.solve(w)?;
    if eta < 1.0 / (n as f64 * sol.m2c.norm()) {
        return Err(Error::InvalidParameter(format!(
            "eta = {eta} below the validated domain 1/(N |m_2c|)"
        )));
    }
    let psi = ((sol.m1c + sol.m2c).im / (n as f64 * eta)).sqrt() + 1.0 / (n as f64 * eta);
    let sqrt_w = sol.parameter.sqrt_w;
    let zc = C64::new(z.re, 0.0);
    let pis: Vec<[[C64; 2]; 2]> = cfg
        .spec
        .expand()
        .iter()
        .map(|&s| {
            inv2x2([
                [-w * (1.0 + s * sol.m2c), -sqrt_w * zc],
                [-sqrt_w * zc.conj(), -w * (1.0 + sol.m1c)],
            ])
        })
        .collect();
    let pi_scaled = pis.iter().map(|p| norm2x2(*p)).fold(0.0, f64::max) * w.norm().sqrt();

    let per_run: Vec<Result<(f64, f64)>> = par::map_indices(cfg.runs, |r| {
        let s = sample_matrices(cfg, r);
        let mut y = s.tx;
        for i in 0..n {
            y[(i, i)] -= z.re;
        }
        let d = svd(&y)?;
        let a: Vec<C64> = d.s.iter().map(|&sv| 1.0 / (sv * sv - w)).collect();
        let b: Vec<C64> = d.s.iter().zip(&a).map(|(&sv, &ak)| sv * ak / sqrt_w).collect();
        let (g11r, g11i) = scaled_product(&d.u, &a, &d.u);
        let (g12r, g12i) = scaled_product(&d.u, &b, &d.v);
        let (g22r, g22i) = scaled_product(&d.v, &a, &d.v);
        let g = |i: usize, j: usize| -> [[C64; 2]; 2] {
            [
                [C64::new(g11r[(i, j)], g11i[(i, j)]), C64::new(g12r[(i, j)], g12i[(i, j)])],
                [C64::new(g12r[(j, i)], g12i[(j, i)]), C64::new(g22r[(i, j)], g22i[(i, j)])],
            ]
        };
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut grp = g(i, j);
                if i == j {
                    for (row, prow) in grp.iter_mut().zip(&pis[i]) {
                        for (x, p) in row.iter_mut().zip(prow) {
                            *x -= p;
                        }
                    }
                }
                worst = worst.max(norm2x2(grp));
            }
        }
        // quadratic forms along random unit directions
        let mut rng = run_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, r);
        let mut probe: f64 = 0.0;
        for _ in 0..probes {
            let mut v: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= nv);
            let mut q = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let grp = g(i, j);
                    let (vi, vib, vj, vjb) = (v[i], v[i + n], v[j], v[j + n]);
                    q += grp[0][0] * vi * vj + grp[0][1] * vi * vjb + grp[1][0] * vib * vj + grp[1][1] * vib * vjb;
                }
                let p = &pis[i];
                let (vi, vib) = (v[i], v[i + n]);
                q -= p[0][0] * vi * vi + p[0][1] * vi * vib + p[1][0] * vib * vi + p[1][1] * vib * vib;
            }
            probe = probe.max(q.norm());
        }
        Ok((worst, probe))
    });
    let mut max_deviation = Vec::new();
    let mut probe_ratio = Vec::new();
    for r in per_run {
        // failed runs are excluded
        if let Ok((dev, pr)) = r {
            max_deviation.push(dev);
            probe_ratio.push(pr / psi);
        }
    }
    let ratio: Vec<f64> = max_deviation.iter().map(|d| d / psi).collect();
    Ok(EntrywiseReport {
        w: [w.re, w.im],
        psi,
        summary: Summary::of(&ratio),
        max_deviation,
        ratio,
        probe_ratio,
        pi_scaled,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RigidityProfile {
    pub z_mod: f64,
    pub n: usize,
    /// Number of bulk indices per run.
    pub bulk_indices: usize,
    /// Median over bulk indices of `|lambda_j - gamma_j| / gamma_j`, per run.
    pub per_run_median: Vec<f64>,
    pub summary: Summary,
    pub max: f64,
    /// Median over runs of the relative error at every index `j = 1..N`.
    pub by_index: Vec<f64>,
}

impl RigidityProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,median_rel_err\n");
        for (j, e) in self.by_index.iter().enumerate() {
            let _ = writeln!(out, "{},{:.17e}", j + 1, e);
        }
        out
    }
}

/// Indices `j` (0-based) whose classical location lies in the middle 80% of
/// the indices of its band.
pub fn bulk_indices(gamma: &[f64], bands: &[[f64; 2]]) -> Vec<usize> {
    let mut out = Vec::new();
    for b in bands {
        let idx: Vec<usize> = (0..gamma.len()).filter(|&j| gamma[j] >= b[0] && gamma[j] <= b[1]).collect();
        let len = idx.len() as f64;
        for (pos, &j) in idx.iter().enumerate() {
            let frac = (pos as f64 + 0.5) / len;
            if (0.1..=0.9).contains(&frac) {
                out.push(j);
            }
        }
    }
    out
}

/// Relative deviation of the ordered squared singular values from the
/// classical locations of `table` (which must be for the same `|z|`).
pub fn rigidity_profile(ens: &EnsembleResult, z_index: usize, table: &DensityTable) -> Result<RigidityProfile> {
    let z = ens.z_point(z_index)?;
    if (table.z_mod - z.modulus).abs() > 1e-12 {
        return Err(Error::InvalidParameter("density table is for a different |z|".into()));
    }
    let n = ens.config.n;
    let q = quantiles(table, n)?;
    let bulk = bulk_indices(&q.gamma, &table.bands);
    let rel: Vec<Vec<f64>> = ens
        .spectra(z_index)
        .map(|l| l.iter().zip(&q.gamma).map(|(l, g)| (l - g).abs() / g).collect())
        .collect();
    let per_run_median: Vec<f64> = rel
        .iter()
        .map(|r| Summary::of(&bulk.iter().map(|&j| r[j]).collect::<Vec<_>>()).median)
        .collect();
    let max = rel.iter().flat_map(|r| bulk.iter().map(move |&j| r[j])).fold(0.0, f64::max);
    let by_index = (0..n)
        .map(|j| Summary::of(&rel.iter().map(|r| r[j]).collect::<Vec<_>>()).median)
        .collect();
    Ok(RigidityProfile {
        z_mod: z.modulus,
        n,
        bulk_indices: bulk.len(),
        summary: Summary::of(&per_run_median),
        per_run_median,
        max,
        by_index,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtremeStats {
    pub z_mod: f64,
    pub lambda_min: Summary,
    pub lambda_max: Summary,
    /// `exp(-N^0.3)`.
    pub small_bound: f64,
    /// `(||T|| (c0 + 1) + |z|)^2`.
    pub large_bound: f64,
    pub small_violations: usize,
    pub large_violations: usize,
    /// Runs with `lambda_N > (||T|| ||X|| + |z|)^2`.
    pub norm_violations: usize,
}

pub fn extreme_singular_stats(ens: &EnsembleResult, z_index: usize, c0: f64) -> Result<ExtremeStats> {
    let z = ens.z_point(z_index)?;
    let n = ens.config.n as f64;
    let t_norm = ens.config.spec.s()[0].sqrt();
    let small_bound = (-n.powf(0.3)).exp();
    let large_bound = (t_norm * (c0 + 1.0) + z.modulus).powi(2);
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut norm_violations = 0;
    for r in &ens.runs {
        let l = &r.singular[z_index].lambda;
        lo.push(l[0]);
        hi.push(l[l.len() - 1]);
        // the power-iteration estimate is a lower bound for ||X||
        if l[l.len() - 1] > (t_norm * r.x_norm * (1.0 + 1e-3) + z.modulus).powi(2) {
            norm_violations += 1;
        }
    }
    Ok(ExtremeStats {
        z_mod: z.modulus,
        small_violations: lo.iter().filter(|&&x| x < small_bound).count(),
        large_violations: hi.iter().filter(|&&x| x > large_bound).count(),
        lambda_min: Summary::of(&lo),
        lambda_max: Summary::of(&hi),
        small_bound,
        large_bound,
        norm_violations,
    })
}

/// The bump `(1 - |z|^2)^3` on the unit disk.
pub fn bump(z: C64) -> f64 {
    let r2 = z.norm_sqr();
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - r2).powi(3)
    }
}

/// Linear interpolation between adjacent resolved points of a radial
/// profile.
fn radial_interp(profile: &RadialProfile, r: f64, pick: impl Fn(&crate::density::RadialPoint) -> Option<f64>) -> Option<f64> {
    let pts = &profile.points;
    let i = pts.partition_point(|p| p.r <= r);
    if i == 0 {
        return None;
    }
    if i == pts.len() {
        let last = &pts[i - 1];
        return if (last.r - r).abs() <= 1e-12 { pick(last) } else { None };
    }
    let (a, b) = (&pts[i - 1], &pts[i]);
    // never bridge the excluded band around the unit circle
    let band = profile.z_band_min;
    if a.r * a.r < 1.0 + band && b.r * b.r > 1.0 - band {
        return None;
    }
    let (fa, fb) = (pick(a)?, pick(b)?);
    let t = (r - a.r) / (b.r - a.r);
    Some(fa + t * (fb - fa))
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalCircularReport {
    pub z0: [f64; 2],
    pub a: f64,
    pub k: usize,
    /// `(1/pi) int F_{z0,a} chi~ dA`.
    pub target: f64,
    /// `|(1/K) sum_j F_{z0,a}(mu_j) - target|` per run.
    pub errors: Vec<f64>,
    pub summary: Summary,
    /// `K^{-1/2 + 2a} ||Delta F||_{L^1}`.
    pub scale: f64,
}

/// Local circular law statistic for `F_{z0,a}(z) = K^{2a} F(K^a (z - z0))`
/// with the built-in bump `F`. `chi` must resolve `chi~` on the disk
/// `|z - z0| <= K^{-a}`.
pub fn local_circular_test(ens: &EnsembleResult, z0: C64, a: f64, chi: &RadialProfile) -> Result<LocalCircularReport> {
    crate::sigma::check_z_band(z0.norm(), chi.z_band_min)?;
    if ens.runs.iter().any(|r| r.eigenvalues.is_empty()) {
        return Err(Error::InvalidParameter("ensemble was run without eigenvalues".into()));
    }
    let k = ens.config.k();
    let scale = (k as f64).powf(a);
    let radial = GaussRule::new(32);
    let n_theta = 128;
    let mut target = 0.0;
    for (u, wu) in radial.nodes.iter().zip(&radial.weights) {
        // nodes on [-1, 1] mapped to [0, 1]
        let u = 0.5 * (u + 1.0);
        let mut ring = 0.0;
        for t in 0..n_theta {
            let th = 2.0 * PI * t as f64 / n_theta as f64;
            let r = (z0 + C64::from_polar(u / scale, th)).norm();
            let c = radial_interp(chi, r, |p| p.chi).ok_or_else(|| {
                Error::InvalidParameter(format!("chi~ not resolved at r = {r:.4} (window hits the excluded band?)"))
            })?;
            ring += c;
        }
        target += 0.5 * wu * (1.0 - u * u).powi(3) * u * ring * 2.0 * PI / n_theta as f64;
    }
    target /= PI;
    let k2a = scale * scale;
    let errors: Vec<f64> = ens
        .runs
        .iter()
        .map(|r| {
            let s: f64 = r.nontrivial_eigenvalues(k).iter().map(|&mu| k2a * bump((mu - z0) * scale)).sum();
            (s / k as f64 - target).abs()
        })
        .collect();
    Ok(LocalCircularReport {
        z0: [z0.re, z0.im],
        a,
        k,
        target,
        summary: Summary::of(&errors),
        errors,
        scale: (k as f64).powf(-0.5 + 2.0 * a) * BUMP_LAPLACIAN_L1,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EsdReport {
    pub z_mod: f64,
    /// Kolmogorov distance between the empirical and limiting CDF, per run.
    pub sup_deviation: Vec<f64>,
    pub summary: Summary,
}

/// `sup |F_N - F|` for a sorted sample against a continuous CDF.
pub fn kolmogorov_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = cdf(x);
            (f - j as f64 / n).abs().max(((j + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov distance between the singular-spectrum ESD and `int rho_2c`.
pub fn singular_esd_check(ens: &EnsembleResult, z_index: usize, table: &DensityTable) -> Result<EsdReport> {
    let z = ens.z_point(z_index)?;
    if (table.z_mod - z.modulus).abs() > 1e-12 {
        return Err(Error::InvalidParameter("density table is for a different |z|".into()));
    }
    let sup: Vec<f64> = ens.spectra(z_index).map(|l| kolmogorov_distance(l, |x| table.cdf(x))).collect();
    Ok(EsdReport {
        z_mod: z.modulus,
        summary: Summary::of(&sup),
        sup_deviation: sup,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialEsdReport {
    pub r: Vec<f64>,
    pub theory: Vec<f64>,
    /// Run-averaged empirical radial CDF.
    pub empirical: Vec<f64>,
    /// `sup_r |F_hat(r) - F(r)|` per run over the resolved radii.
    pub sup_deviation: Vec<f64>,
    pub summary: Summary,
}

impl RadialEsdReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,F,F_hat\n");
        for ((r, f), e) in self.r.iter().zip(&self.theory).zip(&self.empirical) {
            let _ = writeln!(out, "{r},{f:.17e},{e:.17e}");
        }
        out
    }
}

/// Empirical radial CDF `#{j : |mu_j| <= r} / K` of the nontrivial
/// eigenvalues against `F(r)` at every profile radius where `F` is resolved.
pub fn radial_esd_cdf(ens: &EnsembleResult, profile: &RadialProfile) -> Result<RadialEsdReport> {
    if ens.runs.iter().any(|r| r.eigenvalues.is_empty()) {
        return Err(Error::InvalidParameter("ensemble was run without eigenvalues".into()));
    }
    let k = ens.config.k();
    let (r, theory): (Vec<f64>, Vec<f64>) = profile.points.iter().filter_map(|p| p.f.map(|f| (p.r, f))).unzip();
    let mut empirical = vec![0.0; r.len()];
    let mut sup = Vec::with_capacity(ens.runs.len());
    for run in &ens.runs {
        let mut moduli: Vec<f64> = run.nontrivial_eigenvalues(k).iter().map(|m| m.norm()).collect();
        moduli.sort_by(f64::total_cmp);
        let mut worst: f64 = 0.0;
        for (i, (&ri, &fi)) in r.iter().zip(&theory).enumerate() {
            let fhat = moduli.partition_point(|&m| m <= ri) as f64 / k as f64;
            empirical[i] += fhat / ens.runs.len() as f64;
            worst = worst.max((fhat - fi).abs());
        }
        sup.push(worst);
    }
    Ok(RadialEsdReport {
        r,
        theory,
        empirical,
        summary: Summary::of(&sup),
        sup_deviation: sup,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Kolmogorov limiting tail `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
fn kolmogorov_q(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let en = ((n1 * n2) as f64 / (n1 + n2) as f64).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d),
        n1,
        n2,
    }
}
