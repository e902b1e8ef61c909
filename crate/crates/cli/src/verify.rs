//! `verify` and `selfcheck`.
//!
//! Statistical thresholds carry fixed headroom (x10 on medians for the local
//! laws, x5 with a `K^0.05` allowance for the local circular law); they are
//! engineering choices, not sharp constants.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use serde::Serialize;
use serde_json::json;
use txlaw::density::{
    chi_tilde, max_deviation, radial_grid, tabulate_density, verify_stieltjes, DensityOptions, DensityTable,
    RadialOptions,
};
use txlaw::linalg::{companion_roots, general_eigenvalues, sort_complex, svd, symmetric_eigenvalues, DenseMatrix};
use txlaw::montecarlo::{
    averaged_law_profile, local_circular_test, radial_esd_cdf, rigidity_profile, run_ensemble, singular_esd_check,
    EnsembleConfig, EnsembleResult, ZPoint, BUMP_LAPLACIAN_L1,
};
use txlaw::sigma::SigmaSpectrum;
use txlaw::support::{check_bulk_regularity, find_edges, EdgeOptions, SupportProfile};
use txlaw::{MasterSolver, SolverOptions};

use crate::output::{load_spectrum, solver_options, Input, Job};
use crate::{Common, Failure, Suite, VerifyArgs};

#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Criterion {
    /// Passes when `value <= threshold`.
    fn at_most(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name,
            pass: value <= threshold,
            value,
            threshold,
            detail,
        }
    }
}

const DEFAULT_Z: f64 = 1.5;

struct Ctx<'a> {
    c: &'a Common,
    input: &'a Input,
    z: f64,
    solver: SolverOptions,
}

impl Ctx<'_> {
    fn profile(&self) -> Result<SupportProfile, Failure> {
        txlaw::sigma::check_z_band(self.z, self.c.zband)?;
        Ok(find_edges(
            &self.input.spec,
            self.z,
            &EdgeOptions {
                eta0: self.c.eta0,
                solver: self.solver,
                ..Default::default()
            },
        )?)
    }

    fn table(&self, profile: &SupportProfile) -> Result<DensityTable, Failure> {
        Ok(tabulate_density(
            &self.input.spec,
            profile,
            &DensityOptions {
                eta0: self.c.eta0,
                solver: self.solver,
                ..Default::default()
            },
        )?)
    }

    fn ensemble(&self, z_list: Vec<ZPoint>, eigenvalues: bool) -> Result<EnsembleResult, Failure> {
        let mut cfg = EnsembleConfig::new(self.input.spec.clone(), z_list, self.c.runs, self.c.seed);
        cfg.t_mode = self.c.tmode;
        cfg.x_dist = self.c.dist;
        cfg.eigenvalues = eigenvalues;
        let ens = run_ensemble(&cfg)?;
        ens.require_success(0.95)?;
        Ok(ens)
    }
}

pub fn run(a: &VerifyArgs) -> Result<bool, Failure> {
    let c = &a.common;
    let input = load_spectrum(c)?;
    let ctx = Ctx {
        c,
        input: &input,
        z: c.z.unwrap_or(DEFAULT_Z),
        solver: solver_options(c),
    };
    let mut job = Job::start("verify", c)?;
    let suites: Vec<Suite> = match a.suite {
        Suite::All => vec![Suite::Engine, Suite::Esd, Suite::LocalLaw, Suite::Rigidity, Suite::CircularLaw],
        s => vec![s],
    };
    let mut criteria = Vec::new();
    for s in &suites {
        match s {
            Suite::Engine => criteria.extend(engine(&ctx)?),
            Suite::CircularLaw => criteria.extend(circular_law(&ctx)?),
            Suite::LocalLaw => criteria.push(local_law(&ctx)?),
            Suite::Rigidity => criteria.push(rigidity(&ctx)?),
            Suite::Esd => criteria.push(esd(&ctx)?),
            Suite::All => unreachable!(),
        }
    }
    let passed = criteria.iter().all(|k| k.pass);
    for k in &criteria {
        println!("{} [{}] {}", k.name, if k.pass { "PASS" } else { "FAIL" }, k.detail);
    }
    job.write_json(
        "verify.json",
        &json!({ "suite": a.suite, "z": ctx.z, "criteria": criteria, "passed": passed }),
    )?;
    job.finish(a, c, &input, json!({ "z": ctx.z, "suites": suites, "solver": ctx.solver }))?;
    Ok(passed)
}

fn engine(ctx: &Ctx) -> Result<Vec<Criterion>, Failure> {
    let mut out = vec![marchenko_pastur()?];

    let spec = SigmaSpectrum::identity(4);
    let mut grid = radial_grid(0.1, 0.85, 0.05);
    grid.extend(radial_grid(1.15, 2.0, 0.05));
    let prof = chi_tilde(&spec, &grid, &RadialOptions::default())?;
    let worst = prof
        .points
        .iter()
        .map(|p| {
            let want = if p.r < 1.0 { 1.0 } else { 0.0 };
            p.chi.map_or(f64::INFINITY, |chi| (chi - want).abs())
        })
        .fold(0.0, f64::max);
    out.push(Criterion::at_most(
        "circular-law-limit",
        worst,
        0.02,
        format!("T = I: max |chi~ - 1_(r<1)| = {worst:.2e}"),
    ));

    let profile = ctx.profile()?;
    let table = ctx.table(&profile)?;
    let top = profile.top_edge();
    let pts: Vec<C> = (0..10)
        .map(|k| C::new(1.2 * top * (k as f64 + 0.5) / 10.0, 0.1 + 0.09 * k as f64))
        .collect();
    let checks = verify_stieltjes(&table, &ctx.input.spec, &pts, 1e-6, ctx.solver)?;
    let dev = max_deviation(&checks);
    out.push(Criterion::at_most(
        "stieltjes-consistency",
        dev,
        1e-4,
        format!("|z| = {}: max relative deviation {dev:.2e}", ctx.z),
    ));
    let mass_dev = (table.total_mass - 1.0).abs();
    out.push(Criterion::at_most(
        "density-mass",
        mass_dev,
        1e-4,
        format!("|mass - 1| = {mass_dev:.2e} over {} band(s)", profile.bands.len()),
    ));
    Ok(out)
}

fn marchenko_pastur() -> Result<Criterion, Failure> {
    let solver = MasterSolver::new(&SigmaSpectrum::identity(4), 0.0, SolverOptions::diagnostic())?;
    let mut worst: f64 = 0.0;
    for k in 0..=38 {
        let x = 0.1 + 0.1 * k as f64;
        let rho = solver.density_at(x, 1e-7)?.rho2;
        worst = worst.max((rho - ((4.0 - x) / x).sqrt() / (2.0 * PI)).abs());
    }
    Ok(Criterion::at_most(
        "marchenko-pastur",
        worst,
        1e-6,
        format!("max |rho2 - MP| = {worst:.2e} on [0.1, 3.9]"),
    ))
}

fn esd(ctx: &Ctx) -> Result<Criterion, Failure> {
    let profile = ctx.profile()?;
    let table = ctx.table(&profile)?;
    let ens = ctx.ensemble(vec![ZPoint::real(ctx.z)], false)?;
    let rep = singular_esd_check(&ens, 0, &table)?;
    Ok(Criterion::at_most(
        "singular-esd",
        rep.summary.median,
        0.02,
        format!(
            "|z| = {}: Kolmogorov distance median {:.4}, p90 {:.4} over {} runs",
            ctx.z, rep.summary.median, rep.summary.p90, rep.summary.runs
        ),
    ))
}

fn local_law(ctx: &Ctx) -> Result<Criterion, Failure> {
    let n = ctx.input.spec.n_rows();
    let profile = ctx.profile()?;
    let band = *profile
        .bands
        .iter()
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .ok_or_else(|| Failure::Domain("empty support".into()))?;
    let bulk = check_bulk_regularity(band, &ctx.input.spec, ctx.z, 0.05, 1e-3, ctx.solver)?;
    let e = 0.5 * (band[0] + band[1]);
    let ens = ctx.ensemble(vec![ZPoint::real(ctx.z)], false)?;
    let eta_top = (n as f64).powf(-0.5);
    let eta_low = 5.0 / n as f64;
    let etas: Vec<f64> = (0..=8).map(|k| eta_low * (eta_top / eta_low).powf(k as f64 / 8.0)).collect();
    let prof = averaged_law_profile(&ens, 0, e, &etas, ctx.solver)?;
    let worst = prof.points.iter().map(|p| p.stat.median).fold(0.0, f64::max);
    let mut k = Criterion::at_most(
        "averaged-local-law",
        worst,
        10.0,
        format!(
            "E = {e:.4}: max over eta in [5/N, N^-1/2] of median N eta |m2 - m2c| = {worst:.3}, bulk regular: {}",
            bulk.regular
        ),
    );
    k.pass &= bulk.regular && prof.in_support;
    Ok(k)
}

fn rigidity(ctx: &Ctx) -> Result<Criterion, Failure> {
    let n = ctx.input.spec.n_rows();
    let profile = ctx.profile()?;
    let table = ctx.table(&profile)?;
    let ens = ctx.ensemble(vec![ZPoint::real(ctx.z)], false)?;
    let rep = rigidity_profile(&ens, 0, &table)?;
    let bound = (n as f64).powf(-0.8);
    Ok(Criterion::at_most(
        "rigidity",
        rep.summary.median,
        bound,
        format!(
            "median bulk |lambda_j - gamma_j| / gamma_j = {:.2e} (bound N^-0.8 = {bound:.2e}) over {} indices",
            rep.summary.median,
            rep.bulk_indices
        ),
    ))
}

fn circular_law(ctx: &Ctx) -> Result<Vec<Criterion>, Failure> {
    let ens = ctx.ensemble(vec![], true)?;
    let opts = RadialOptions {
        z_band_min: ctx.c.zband,
        ..Default::default()
    };
    let coarse = chi_tilde(&ctx.input.spec, &radial_grid(0.05, 2.0, 0.05), &opts)?;
    let rad = radial_esd_cdf(&ens, &coarse)?;
    let mut out = vec![Criterion::at_most(
        "radial-esd",
        rad.summary.median,
        0.04,
        format!("sup_r |F_hat - F| median {:.4} over {} radii", rad.summary.median, rad.r.len()),
    )];

    let a = 0.25;
    let k = ens.config.k() as f64;
    let window = k.powf(-a);
    let inner = (1.0 - ctx.c.zband).sqrt();
    let mut grid = radial_grid(0.02, inner - 0.005, 0.005);
    grid.extend(radial_grid((1.0 + ctx.c.zband).sqrt() + 0.005, 2.5, 0.005));
    let chi = chi_tilde(&ctx.input.spec, &grid, &opts)?;
    let bound = 5.0 * k.powf(-0.5 + 2.0 * a) * BUMP_LAPLACIAN_L1 * k.powf(0.05);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    for (r, phase) in [(0.3, 0.3), (0.5, 1.9), (0.7, 4.0), (1.7, 0.0)] {
        if (r + window > inner && r < 1.0) || (r - window < (1.0 + ctx.c.zband).sqrt() && r > 1.0) {
            continue;
        }
        let rep = local_circular_test(&ens, C::from_polar(r, phase), a, &chi)?;
        worst = worst.max(rep.summary.median);
        tested += 1;
    }
    if tested == 0 {
        return Err(Failure::Domain(format!(
            "K = {k} too small: every local window of radius {window:.3} touches the excluded band"
        )));
    }
    out.push(Criterion::at_most(
        "local-circular-law",
        worst,
        bound,
        format!("a = {a}: worst median error {worst:.3e} at {tested} centres (bound {bound:.3e})"),
    ));
    Ok(out)
}

fn trig_matrix(rows: usize, cols: usize, salt: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |i, j| ((i * 7 + j * 3) as f64 + salt).sin())
}

pub fn selfcheck(c: &Common) -> Result<bool, Failure> {
    let input = load_spectrum(c)?;
    let mut job = Job::start("selfcheck", c)?;
    let mut criteria = Vec::new();

    let a = trig_matrix(24, 24, 0.5);
    let sym = a.matmul(&a.transpose());
    let ev = symmetric_eigenvalues(&sym)?;
    let trace_err = (ev.iter().sum::<f64>() - sym.trace()).abs() / sym.trace();
    let frob_err = (ev.iter().map(|v| v * v).sum::<f64>().sqrt() - sym.frobenius_norm()).abs() / sym.frobenius_norm();
    criteria.push(Criterion::at_most(
        "symmetric-eigen",
        trace_err.max(frob_err),
        1e-10,
        format!("trace and Frobenius identities to {:.1e}", trace_err.max(frob_err)),
    ));

    let sv = svd(&a)?.s;
    let mut sq: Vec<f64> = sv.iter().map(|s| s * s).collect();
    sq.sort_by(f64::total_cmp);
    let mut ev_sorted = ev.clone();
    ev_sorted.sort_by(f64::total_cmp);
    let top = ev_sorted.last().copied().unwrap_or(1.0);
    let svd_err = sq.iter().zip(&ev_sorted).map(|(x, y)| (x - y).abs() / top).fold(0.0, f64::max);
    criteria.push(Criterion::at_most(
        "svd",
        svd_err,
        1e-10,
        format!("squared singular values vs eigenvalues of A A^T: {svd_err:.1e}"),
    ));

    let mut blk = DenseMatrix::zeros(4, 4);
    for (i, j, v) in [(0, 1, -1.0), (1, 0, 1.0), (2, 2, 2.0), (3, 3, 3.0), (0, 3, 0.5), (2, 3, 0.25)] {
        blk.row_mut(i)[j] = v;
    }
    let mut got = general_eigenvalues(&blk)?;
    let mut want = vec![C::new(0.0, -1.0), C::new(0.0, 1.0), C::new(2.0, 0.0), C::new(3.0, 0.0)];
    sort_complex(&mut got);
    sort_complex(&mut want);
    let gen_err = got.iter().zip(&want).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    criteria.push(Criterion::at_most(
        "general-eigen",
        gen_err,
        1e-10,
        format!("block-triangular test matrix: {gen_err:.1e}"),
    ));

    // (x - 1)(x - 2)(x - 3), ascending powers
    let roots = companion_roots(&[C::new(-6.0, 0.0), C::new(11.0, 0.0), C::new(-6.0, 0.0), C::new(1.0, 0.0)])?;
    let mut r = roots.roots.clone();
    sort_complex(&mut r);
    let poly_err = r
        .iter()
        .zip([1.0, 2.0, 3.0])
        .map(|(x, y)| (x - C::new(y, 0.0)).norm())
        .fold(0.0, f64::max);
    criteria.push(Criterion::at_most(
        "companion-roots",
        poly_err,
        1e-10,
        format!("roots of (x-1)(x-2)(x-3): {poly_err:.1e}"),
    ));

    criteria.push(marchenko_pastur()?);

    let small = input.spec.rescaled_dims(input.spec.n_rows().min(40), input.spec.n_cols().min(40));
    let spec = small.unwrap_or_else(|_| SigmaSpectrum::identity(40));
    let cfg = EnsembleConfig::new(spec, vec![ZPoint::real(1.5)], 3, c.seed);
    let one = txlaw::par::with_threads(1, || run_ensemble(&cfg))?;
    let many = run_ensemble(&cfg)?;
    let same = one.singular_csv() == many.singular_csv() && one.eigenvalue_csv() == many.eigenvalue_csv();
    criteria.push(Criterion {
        name: "determinism",
        pass: same,
        value: if same { 0.0 } else { 1.0 },
        threshold: 0.0,
        detail: format!("{} runs at N = {}: one worker vs pool identical: {same}", cfg.runs, cfg.n),
    });

    let passed = criteria.iter().all(|k| k.pass);
    for k in &criteria {
        println!("{} [{}] {}", k.name, if k.pass { "PASS" } else { "FAIL" }, k.detail);
    }
    job.write_json("selfcheck.json", &json!({ "criteria": criteria, "passed": passed }))?;
    job.finish(c, c, &input, json!({}))?;
    Ok(passed)
}
