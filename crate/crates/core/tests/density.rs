use std::f64::consts::PI;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txlaw::density::{
    chi_tilde, log_potential, max_deviation, quantiles, radial_grid, tabulate_density, verify_stieltjes, DensityOptions,
    RadialOptions,
};
use txlaw::master::MasterSolver;
use txlaw::support::{find_edges, EdgeOptions};
use txlaw::{SigmaSpectrum, SolverOptions};

fn table_for(spec: &SigmaSpectrum, z: f64, solver: SolverOptions) -> txlaw::density::DensityTable {
    let profile = find_edges(
        spec,
        z,
        &EdgeOptions {
            solver,
            ..Default::default()
        },
    )
    .unwrap();
    tabulate_density(
        spec,
        &profile,
        &DensityOptions {
            solver,
            ..Default::default()
        },
    )
    .unwrap()
}

/// Ratio-one Marchenko-Pastur CDF: with `x = 4 sin^2(phi)` the density
/// becomes `(4/pi) cos^2(phi) dphi`.
fn mp_cdf(x: f64) -> f64 {
    let phi = (x.sqrt() / 2.0).min(1.0).asin();
    (2.0 * phi + (2.0 * phi).sin()) / PI
}

/// Tanh-sinh quadrature on `[a, b]`; tolerant of integrable endpoint
/// singularities.
fn tanh_sinh<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let h = 1.0 / 64.0;
    let d = 0.5 * (b - a);
    let mut total = 0.0;
    for k in -320..=320 {
        let t = k as f64 * h;
        let u = 0.5 * PI * t.sinh();
        let x = u.tanh();
        let w = 0.5 * PI * t.cosh() / u.cosh().powi(2);
        // distance from the nearer endpoint, computed without cancellation
        let gap = d / (u.abs().exp() * u.cosh());
        let pt = if x < 0.0 { a + gap } else { b - gap };
        if gap <= 0.0 || pt <= a || pt >= b {
            continue;
        }
        total += w * f(pt);
    }
    total * d * h
}

#[test]
fn marchenko_pastur_table_and_quantiles() {
    let spec = SigmaSpectrum::identity(4);
    let t = table_for(&spec, 0.0, SolverOptions::diagnostic());
    assert!((t.total_mass - 1.0).abs() <= 1e-6);
    for nd in &t.nodes {
        if nd.x >= 0.1 && nd.x <= 3.9 {
            let exact = ((4.0 - nd.x) / nd.x).sqrt() / (2.0 * PI);
            assert!((nd.rho2 - exact).abs() <= 1e-6, "x={}", nd.x);
        }
    }
    let q = quantiles(&t, 1000).unwrap();
    for (j, g) in q.gamma.iter().enumerate() {
        assert!((mp_cdf(*g) - (j + 1) as f64 / 1000.0).abs() <= 1e-6, "j={j}");
    }
    assert!(q.gamma.windows(2).all(|w| w[0] <= w[1]));
    assert!((q.gamma[999] - 4.0).abs() <= 1e-6);
    // median by bisection on the closed form
    let (mut lo, mut hi) = (0.0, 4.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mp_cdf(mid) < 0.5 {
            lo = mid
        } else {
            hi = mid
        }
    }
    let med = quantiles(&t, 2).unwrap().gamma[0];
    assert!((med - 0.5 * (lo + hi)).abs() <= 1e-6);
    assert!((t.cdf(1.0) - mp_cdf(1.0)).abs() <= 1e-8);
    assert!((t.rho2_at(1.0) - (3.0_f64).sqrt() / (2.0 * PI)).abs() <= 1e-8);
}

#[test]
fn bimodal_masses_and_quantiles() {
    let spec = SigmaSpectrum::bimodal(4);
    for z in [0.5, 0.75, 1.2, 1.5] {
        let t = table_for(&spec, z, SolverOptions::default());
        assert!((t.total_mass - 1.0).abs() <= 1e-4, "|z|={z}");
        assert!((t.total_mass_rho1 - 1.0).abs() <= 1e-4, "|z|={z}");
        assert!(t.nodes.iter().all(|n| n.rho2 >= 0.0 && n.rho1 >= 0.0));
        let q = quantiles(&t, 50).unwrap();
        let solver = MasterSolver::new(&spec, z, SolverOptions::default()).unwrap();
        let lo = t.bands[0][0];
        let top = t.bands.last().unwrap()[1];
        assert_eq!(q.gamma[49], top);
        for j in [1usize, 10, 25, 40] {
            let g = q.gamma[j - 1];
            assert!(t.bands.iter().any(|b| g >= b[0] && g <= b[1]));
            let mass = tanh_sinh(lo, g, |x| {
                // points this close to a soft edge carry no measurable mass
                if lo > 0.0 && x - lo < 1e-12 * lo {
                    return 0.0;
                }
                solver.density_at(x, 1e-3 * (x - lo).min(1e-4)).unwrap().rho2
            });
            assert!((mass - j as f64 / 50.0).abs() <= 1e-6, "|z|={z} j={j}: {mass}");
        }
    }
}

#[test]
fn below_lowest_edge_density_is_zero() {
    let spec = SigmaSpectrum::bimodal(4);
    let t = table_for(&spec, 1.5, SolverOptions::default());
    let lo = t.bands[0][0];
    assert_eq!(t.rho2_at(0.5 * lo), 0.0);
    assert_eq!(t.cdf(0.5 * lo), 0.0);
    assert!(t.nodes.iter().all(|n| n.x > lo));
}

#[test]
fn stieltjes_transforms_match_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (spec, z) in [
        (SigmaSpectrum::identity(4), 1.5),
        (SigmaSpectrum::bimodal(4), 0.5),
        (SigmaSpectrum::bimodal(4), 1.5),
    ] {
        let t = table_for(&spec, z, SolverOptions::default());
        let top = t.bands.last().unwrap()[1];
        let pts: Vec<C> = (0..10)
            .map(|_| C::new(rng.random_range(0.0..1.2 * top), rng.random_range(0.1..1.0)))
            .collect();
        let checks = verify_stieltjes(&t, &spec, &pts, 1e-6, SolverOptions::default()).unwrap();
        assert!(max_deviation(&checks) <= 1e-4, "{checks:?}");
    }
}

#[test]
fn coarse_table_is_flagged() {
    let spec = SigmaSpectrum::bimodal(4);
    let profile = find_edges(&spec, 0.5, &EdgeOptions::default()).unwrap();
    let coarse = tabulate_density(
        &spec,
        &profile,
        &DensityOptions {
            resolution: 8,
            order: 4,
            grade_levels: 0,
            mass_tolerance: 1.0,
            ..Default::default()
        },
    )
    .unwrap();
    let err = verify_stieltjes(&coarse, &spec, &[C::new(1.0, 0.5)], 1e-6, SolverOptions::default());
    assert!(err.is_err());
}

#[test]
fn log_potential_values() {
    // MP: int_0^4 log x (1/2pi) sqrt((4-x)/x) dx = -1
    let mp = SigmaSpectrum::identity(4);
    let u = log_potential(&mp, 0.0, SolverOptions::diagnostic()).unwrap();
    assert!((u.value + 1.0).abs() <= 1e-10);
    assert!(u.error_estimate <= 1e-6);
    let t = table_for(&mp, 0.0, SolverOptions::diagnostic());
    assert!((t.log_potential().value + 1.0).abs() <= 1e-8);
    for r in [2.0_f64, 2.5, 3.0] {
        let u = log_potential(&mp, r, SolverOptions::default()).unwrap();
        assert!((u.value - 2.0 * r.ln()).abs() <= 1e-4);
    }
    let bimodal = SigmaSpectrum::bimodal(4);
    for z in [0.5, 0.75, 1.2, 1.5] {
        let a = log_potential(&bimodal, z, SolverOptions::default()).unwrap();
        let b = table_for(&bimodal, z, SolverOptions::default()).log_potential();
        assert!(a.value.is_finite());
        assert!((a.value - b.value).abs() <= 1e-8, "|z|={z}");
    }
}

/// Radial CDF of the limiting eigenvalue law of `TX` from free probability:
/// `r^2 = (F - 1) / u` where `u < 0` solves
/// `sum_i w_i s_i u / (1 - s_i u) = F - 1`.
fn free_radial_cdf(spec: &SigmaSpectrum, r: f64) -> f64 {
    if r >= 1.0 {
        return 1.0;
    }
    let weights = spec.weights();
    let psi = |u: f64| -> f64 { spec.s().iter().zip(&weights).map(|(s, w)| w * s * u / (1.0 - s * u)).sum() };
    let radius2 = |f: f64| -> f64 {
        // psi is increasing on u < 0 from -1 to 0
        let (mut lo, mut hi) = (-1e12, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if psi(mid) < f - 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        (f - 1.0) / (0.5 * (lo + hi))
    };
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if radius2(mid) < r * r {
            lo = mid
        } else {
            hi = mid
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn identity_gives_uniform_disk() {
    let spec = SigmaSpectrum::identity(4);
    let grid = radial_grid(0.1, 2.0, 0.05);
    let prof = chi_tilde(&spec, &grid, &RadialOptions::default()).unwrap();
    for p in &prof.points {
        if let (Some(chi), Some(f)) = (p.chi, p.f) {
            if p.r <= 0.85 {
                assert!((chi - 1.0).abs() <= 0.02);
                assert!((f - p.r * p.r).abs() <= 0.02);
            }
            if p.r >= 1.15 {
                assert!(chi.abs() <= 0.02);
                assert!((f - 1.0).abs() <= 0.02);
            }
        }
    }
    // the excluded band around r = 1 is a hole
    let hole = prof.points.iter().find(|p| (p.r - 1.0).abs() < 1e-9).unwrap();
    assert!(hole.chi.is_none() && hole.u.is_none());
}

#[test]
fn bimodal_radial_profile_matches_free_probability() {
    let spec = SigmaSpectrum::bimodal(4);
    let grid = radial_grid(0.05, 2.0, 0.025);
    let prof = chi_tilde(&spec, &grid, &RadialOptions::default()).unwrap();
    let integrated = prof.integrated_f();
    let mut resolved = 0;
    for (p, fi) in prof.points.iter().zip(&integrated) {
        let (Some(chi), Some(f)) = (p.chi, p.f) else { continue };
        resolved += 1;
        assert!(chi >= -2e-2, "r={}", p.r);
        assert!((f - free_radial_cdf(&spec, p.r)).abs() <= 1e-2, "r={} F={f}", p.r);
        assert!((f - fi.unwrap()).abs() <= 3e-2, "r={}", p.r);
        if p.r > 1.0 {
            assert!(!p.kink);
        }
    }
    assert!(resolved > 60);
    let last = prof.points.last().unwrap();
    assert!((last.f.unwrap() - 1.0).abs() <= 2e-2);
    let us: Vec<(f64, f64)> = prof.points.iter().filter(|p| p.r > 1.05).filter_map(|p| p.u.map(|u| (p.r, u))).collect();
    assert!(us.windows(2).all(|w| w[1].1 > w[0].1));
}

/// `sum_j log gamma_j - N U` is a right-endpoint Riemann sum error of
/// `g(u) = log F^{-1}(u)`. With two soft edges it tends to
/// `(log e_top - log e_low) / 2`; with the hard edge at 0, `g(u) ~ 2 log u`
/// near 0 adds Stirling's `log(2 pi N)`, so doubling `N` adds `log 2`.
#[test]
fn quantile_log_sum_tracks_potential() {
    let spec = SigmaSpectrum::bimodal(4);
    let diff = |t: &txlaw::density::DensityTable, u: f64, n: usize| -> f64 {
        let q = quantiles(t, n).unwrap();
        q.gamma.iter().map(|g| g.ln()).sum::<f64>() - n as f64 * u
    };
    for z in [1.2, 1.5] {
        let t = table_for(&spec, z, SolverOptions::default());
        let u = log_potential(&spec, z, SolverOptions::default()).unwrap().value;
        let endpoint = 0.5 * (t.bands.last().unwrap()[1].ln() - t.bands[0][0].ln());
        // square-root edges leave an O(N^{-2/3}) remainder
        let (d1, d2) = (diff(&t, u, 1000), diff(&t, u, 2000));
        let r = 2f64.powf(-2.0 / 3.0);
        let limit = d2 + (d2 - d1) * r / (1.0 - r);
        assert!((limit - endpoint).abs() <= 0.02, "|z|={z}: {limit} vs {endpoint}");
    }
    for z in [0.5, 0.75] {
        let t = table_for(&spec, z, SolverOptions::default());
        let u = log_potential(&spec, z, SolverOptions::default()).unwrap().value;
        let step = diff(&t, u, 2000) - diff(&t, u, 1000);
        assert!((step - 2f64.ln()).abs() <= 0.01, "|z|={z}: {step}");
    }
}

#[test]
fn csv_headers() {
    let spec = SigmaSpectrum::identity(4);
    let t = table_for(&spec, 1.5, SolverOptions::default());
    assert!(t.to_csv().starts_with("x,rho2c\n"));
    assert!(quantiles(&t, 3).unwrap().to_csv().starts_with("j,gamma_j\n1,"));
    let prof = chi_tilde(&spec, &[0.5, 1.0], &RadialOptions::default()).unwrap();
    let csv = prof.to_csv();
    assert!(csv.starts_with("r,U,chi,F\n"));
    assert!(csv.lines().nth(2).unwrap().ends_with(",,,"));
}
