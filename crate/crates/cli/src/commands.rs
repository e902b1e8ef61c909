use serde::Serialize;
use serde_json::json;
use txlaw::density::{chi_tilde, quantiles as classical_locations, tabulate_density, RadialOptions};
use txlaw::montecarlo::{run_ensemble, EnsembleConfig, EntryMoments, RunFailure, ZPoint};
use txlaw::sigma::check_z_band;
use txlaw::support::{find_edges, EdgeOptions, SupportProfile};

use crate::output::{default_density_options, linspace, load_spectrum, require_z, solver_options, Input, Job};
use crate::{ChiArgs, Common, Failure};

fn edge_options(c: &Common) -> EdgeOptions {
    EdgeOptions {
        eta0: c.eta0,
        solver: solver_options(c),
        ..Default::default()
    }
}

fn profile_for(c: &Common, input: &Input, z: f64, opts: &EdgeOptions) -> Result<SupportProfile, Failure> {
    check_z_band(z, c.zband)?;
    Ok(find_edges(&input.spec, z, opts)?)
}

pub fn density(c: &Common) -> Result<bool, Failure> {
    let input = load_spectrum(c)?;
    let z = require_z(c, "density")?;
    let mut job = Job::start("density", c)?;
    let edge_opts = edge_options(c);
    let profile = profile_for(c, &input, z, &edge_opts)?;
    let dens_opts = default_density_options(c);
    let table = tabulate_density(&input.spec, &profile, &dens_opts)?;
    job.write("density.csv", &table.to_csv())?;
    job.write("bands.json", &(profile.to_json() + "\n"))?;
    let effective = json!({
        "z": z,
        "edges": edge_opts,
        "density": dens_opts,
        "total_mass": table.total_mass,
    });
    job.finish(c, c, &input, effective)?;
    Ok(true)
}

pub fn edges(c: &Common) -> Result<bool, Failure> {
    let input = load_spectrum(c)?;
    let z = require_z(c, "edges")?;
    let mut job = Job::start("edges", c)?;
    let edge_opts = EdgeOptions {
        scan_points: c.grid.unwrap_or(2000),
        ..edge_options(c)
    };
    let profile = profile_for(c, &input, z, &edge_opts)?;
    let regularity = profile.regularity(edge_opts.epsilon);
    job.write_json("edges.json", &json!({ "profile": profile, "regularity": regularity }))?;
    job.finish(c, c, &input, json!({ "z": z, "edges": edge_opts }))?;
    Ok(true)
}

pub fn chi(a: &ChiArgs) -> Result<bool, Failure> {
    let c = &a.common;
    if !(a.rmin >= 0.0 && a.rmax > a.rmin) {
        return Err(Failure::Usage(format!("need 0 <= rmin < rmax, got {} and {}", a.rmin, a.rmax)));
    }
    let input = load_spectrum(c)?;
    let mut job = Job::start("chi", c)?;
    let count = c.grid.unwrap_or(191);
    let grid = linspace(a.rmin, a.rmax, count);
    let opts = RadialOptions {
        z_band_min: c.zband,
        ..Default::default()
    };
    let profile = chi_tilde(&input.spec, &grid, &opts)?;
    job.write("radial.csv", &profile.to_csv())?;
    job.finish(a, c, &input, json!({ "radii": count, "radial": opts }))?;
    Ok(true)
}

pub fn quantiles(c: &Common) -> Result<bool, Failure> {
    let input = load_spectrum(c)?;
    let z = require_z(c, "quantiles")?;
    let mut job = Job::start("quantiles", c)?;
    let edge_opts = edge_options(c);
    let profile = profile_for(c, &input, z, &edge_opts)?;
    let dens_opts = default_density_options(c);
    let table = tabulate_density(&input.spec, &profile, &dens_opts)?;
    let q = classical_locations(&table, input.spec.n_rows())?;
    job.write("quantiles.csv", &q.to_csv())?;
    let effective = json!({
        "z": z,
        "count": q.n,
        "mass": q.mass,
        "edges": edge_opts,
        "density": dens_opts,
    });
    job.finish(c, c, &input, effective)?;
    Ok(true)
}

#[derive(Serialize)]
struct RunSummary {
    run_index: usize,
    stream: u64,
    trivial_zeros: usize,
    x_norm: f64,
    moments: EntryMoments,
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    runs: Vec<RunSummary>,
    failures: &'a [RunFailure],
    success_fraction: f64,
}

pub fn simulate(c: &Common) -> Result<bool, Failure> {
    let input = load_spectrum(c)?;
    if let Some(z) = c.z {
        if !(z.is_finite() && z >= 0.0) {
            return Err(Failure::Usage(format!("--z must be a finite |z| >= 0, got {z}")));
        }
    }
    let mut job = Job::start("simulate", c)?;
    let mut cfg = EnsembleConfig::new(input.spec.clone(), c.z.map(ZPoint::real).into_iter().collect(), c.runs, c.seed);
    cfg.t_mode = c.tmode;
    cfg.x_dist = c.dist;
    let ens = run_ensemble(&cfg)?;
    job.write("eigenvalues.csv", &ens.eigenvalue_csv())?;
    if c.z.is_some() {
        job.write("singular.csv", &ens.singular_csv())?;
    }
    let summary = SimulationSummary {
        runs: ens
            .runs
            .iter()
            .map(|r| RunSummary {
                run_index: r.run_index,
                stream: r.stream,
                trivial_zeros: r.trivial_zero_count(),
                x_norm: r.x_norm,
                moments: r.moments,
            })
            .collect(),
        failures: &ens.failures,
        success_fraction: ens.success_fraction(),
    };
    job.write_json("runs.json", &summary)?;
    job.finish(c, c, &input, json!({ "ensemble": cfg }))?;
    for f in &ens.failures {
        eprintln!("run {} failed: {}", f.run_index, f.message);
    }
    ens.require_success(0.95)?;
    Ok(true)
}
