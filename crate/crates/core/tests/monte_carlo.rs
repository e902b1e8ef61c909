use num_complex::Complex64 as C;
use txlaw::density::{chi_tilde, quantiles, radial_grid, tabulate_density, DensityOptions, DensityTable, RadialOptions};
use txlaw::montecarlo::*;
use txlaw::par;
use txlaw::support::{find_edges, EdgeOptions};
use txlaw::{SigmaSpectrum, SolverOptions};

fn table_for(spec: &SigmaSpectrum, z: f64) -> DensityTable {
    let profile = find_edges(spec, z, &EdgeOptions::default()).unwrap();
    tabulate_density(spec, &profile, &DensityOptions::default()).unwrap()
}

fn singular_only(spec: SigmaSpectrum, z: &[f64], runs: usize, seed: u64) -> EnsembleConfig {
    let mut cfg = EnsembleConfig::new(spec, z.iter().map(|&m| ZPoint::real(m)).collect(), runs, seed);
    cfg.eigenvalues = false;
    cfg
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let cfg = EnsembleConfig::new(SigmaSpectrum::identity(4), vec![ZPoint::real(0.5)], 3, 11);
    let a = sample_run(&cfg, 1).unwrap();
    let b = sample_run(&cfg, 1).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.singular[0].lambda, b.singular[0].lambda);

    let cfg = EnsembleConfig::new(SigmaSpectrum::bimodal(40), vec![ZPoint::real(1.5)], 6, 3);
    let one = par::with_threads(1, || run_ensemble(&cfg).unwrap());
    let many = par::with_threads(3, || run_ensemble(&cfg).unwrap());
    for (x, y) in one.runs.iter().zip(&many.runs) {
        assert_eq!(x.eigenvalues, y.eigenvalues);
        assert_eq!(x.singular[0].lambda, y.singular[0].lambda);
    }
    assert_eq!(one.eigenvalue_csv(), many.eigenvalue_csv());
    // different runs differ
    assert_ne!(one.runs[0].eigenvalues, one.runs[1].eigenvalues);
}

#[test]
fn tall_model_has_trivial_zeros() {
    let spec = SigmaSpectrum::new(vec![1.0], vec![4], 6, 4).unwrap();
    for t_mode in [TMode::Diagonal, TMode::Haar] {
        let mut cfg = EnsembleConfig::new(spec.clone(), vec![ZPoint::real(0.3)], 5, 8);
        cfg.t_mode = t_mode;
        let ens = run_ensemble(&cfg).unwrap();
        for r in &ens.runs {
            assert_eq!(r.eigenvalues.len(), 6);
            assert_eq!(r.trivial_zero_count(), 2, "{:?}", r.eigenvalues);
            assert_eq!(r.nontrivial_eigenvalues(4).len(), 4);
            assert!(r.singular[0].lambda.iter().all(|&l| l >= 0.0));
        }
    }
}

#[test]
fn entry_moments_within_five_sigma() {
    for dist in [XDist::Gauss, XDist::Rademacher, XDist::Skewed] {
        let mut cfg = singular_only(SigmaSpectrum::identity(200), &[0.0], 1, 5);
        cfg.x_dist = dist;
        let r = sample_run(&cfg, 0).unwrap();
        assert_eq!(r.moments.count, 40000);
        assert!(r.moments.max_sigma(dist) <= 5.0, "{dist:?}: {:?}", r.moments);
    }
    // the skewed law is detectably skewed; the others are not
    let mut cfg = singular_only(SigmaSpectrum::identity(200), &[0.0], 1, 5);
    cfg.x_dist = XDist::Skewed;
    assert!(sample_run(&cfg, 0).unwrap().moments.third > 1.0);
    assert!(sample_run(&cfg, 0).unwrap().moments.max_sigma(XDist::Gauss) > 5.0);
}

#[test]
fn complex_z_spectra_depend_only_on_modulus() {
    let spec = SigmaSpectrum::bimodal(80);
    let cfg = EnsembleConfig {
        eigenvalues: false,
        ..EnsembleConfig::new(
            spec,
            vec![
                ZPoint::real(1.3),
                ZPoint {
                    modulus: 1.3,
                    phase: 2.0,
                },
            ],
            20,
            9,
        )
    };
    let ens = run_ensemble(&cfg).unwrap();
    let a: Vec<f64> = ens.runs.iter().flat_map(|r| r.singular[0].lambda.clone()).collect();
    let b: Vec<f64> = ens.runs.iter().flat_map(|r| r.singular[1].lambda.clone()).collect();
    let ks = ks_two_sample(&a, &b);
    assert!(ks.p_value >= 0.01, "{ks:?}");
    // sanity of the test itself: a different modulus is rejected
    let cfg2 = singular_only(SigmaSpectrum::bimodal(80), &[1.6], 20, 9);
    let c: Vec<f64> = run_ensemble(&cfg2).unwrap().runs.iter().flat_map(|r| r.singular[0].lambda.clone()).collect();
    assert!(ks_two_sample(&a, &c).p_value < 1e-6);
}

#[test]
fn haar_and_diagonal_gaussian_ensembles_agree() {
    let spec = SigmaSpectrum::bimodal(200);
    let diag = singular_only(spec.clone(), &[1.5], 50, 21);
    let haar = EnsembleConfig {
        t_mode: TMode::Haar,
        seed: 22,
        ..diag.clone()
    };
    let pool = |cfg: &EnsembleConfig| -> Vec<f64> {
        run_ensemble(cfg).unwrap().runs.iter().flat_map(|r| r.singular[0].lambda.clone()).collect()
    };
    let ks = ks_two_sample(&pool(&diag), &pool(&haar));
    assert!(ks.p_value >= 0.01, "{ks:?}");
}

/// Ratio-one Marchenko-Pastur Stieltjes transform, branch with Im > 0.
fn mp_stieltjes(w: C) -> C {
    let mut r = (w * w - 4.0 * w).sqrt();
    let mut m = (-w + r) / (2.0 * w);
    if m.im < 0.0 {
        r = -r;
        m = (-w + r) / (2.0 * w);
    }
    m
}

#[test]
fn averaged_law_marchenko_pastur_and_bimodal() {
    let cfg = singular_only(SigmaSpectrum::identity(200), &[0.0], 10, 1);
    let ens = run_ensemble(&cfg).unwrap();
    let prof = averaged_law_profile(&ens, 0, 1.0, &[0.05, 0.2, 1.0], SolverOptions::diagnostic()).unwrap();
    assert!(prof.in_support);
    for p in &prof.points {
        let exact = mp_stieltjes(C::new(1.0, p.eta));
        assert!((C::new(p.m2c[0], p.m2c[1]) - exact).norm() <= 1e-10);
        assert!(p.stat.median <= 10.0, "{p:?}");
    }
    assert!(prof.to_csv().starts_with("eta,median,p90,runs\n"));

    let cfg = singular_only(SigmaSpectrum::bimodal(200), &[1.5], 10, 2);
    let ens = run_ensemble(&cfg).unwrap();
    let prof = averaged_law_profile(&ens, 0, 2.0, &[1.0], SolverOptions::default()).unwrap();
    assert!(prof.points[0].stat.median <= 2.0, "{prof:?}");
    assert!(averaged_law_profile(&ens, 0, 2.0, &[1e-3], SolverOptions::default()).is_err());
}

#[test]
fn entrywise_law_identity() {
    let spec = SigmaSpectrum::identity(200);
    let table = table_for(&spec, 1.5);
    let e = quantiles(&table, 2).unwrap().gamma[0];
    let cfg = singular_only(spec, &[1.5], 20, 4);
    let rep = entrywise_law_check(&cfg, 0, C::new(e, 0.1), 2, SolverOptions::default()).unwrap();
    assert_eq!(rep.ratio.len(), 20);
    let good = rep.ratio.iter().filter(|&&r| r <= 10.0).count();
    assert!(good >= 19, "{:?}", rep.ratio);
    assert!(rep.probe_ratio.iter().all(|&r| r <= 10.0));
    // Pi is O(|w|^{-1/2})
    assert!(rep.pi_scaled.is_finite() && rep.pi_scaled <= 10.0, "{}", rep.pi_scaled);
    // a ten times smaller Psi gives ten times larger ratios
    let shrunk: Vec<f64> = rep.max_deviation.iter().map(|d| d / (rep.psi / 10.0)).collect();
    for (s, r) in shrunk.iter().zip(&rep.ratio) {
        assert!((s / r - 10.0).abs() < 1e-9);
    }
    // below the validated domain
    assert!(entrywise_law_check(&cfg, 0, C::new(e, 1e-5), 0, SolverOptions::default()).is_err());
}

#[test]
fn rigidity_and_extremes_small_scale() {
    let spec = SigmaSpectrum::identity(300);
    let table = table_for(&spec, 1.5);
    let cfg = singular_only(spec, &[1.5], 10, 6);
    let ens = run_ensemble(&cfg).unwrap();
    let rig = rigidity_profile(&ens, 0, &table).unwrap();
    assert_eq!(rig.bulk_indices, 240);
    assert!(rig.summary.median <= 300f64.powf(-0.8), "{:?}", rig.summary);
    // edge indices fluctuate more than the bulk
    let edge = rig.by_index[299];
    let bulk = rig.by_index[150];
    assert!(edge > bulk, "{edge} vs {bulk}");
    assert!(rig.to_csv().starts_with("j,median_rel_err\n1,"));

    let ens = run_ensemble(&singular_only(SigmaSpectrum::bimodal(200), &[1.5, 3.0], 10, 7)).unwrap();
    let ex = extreme_singular_stats(&ens, 0, 3.0).unwrap();
    assert_eq!((ex.small_violations, ex.large_violations, ex.norm_violations), (0, 0, 0));
    let far = extreme_singular_stats(&ens, 1, 3.0).unwrap();
    assert!(far.lambda_min.median > ex.lambda_min.median);
    assert_eq!(far.norm_violations, 0);
}

#[test]
fn singular_esd_matches_table() {
    let spec = SigmaSpectrum::bimodal(300);
    let table = table_for(&spec, 1.5);
    let ens = run_ensemble(&singular_only(spec, &[1.5], 5, 12)).unwrap();
    let rep = singular_esd_check(&ens, 0, &table).unwrap();
    assert!(rep.summary.median <= 0.02, "{:?}", rep.summary);
}

#[test]
fn circular_law_for_identity() {
    let spec = SigmaSpectrum::identity(400);
    let cfg = EnsembleConfig::new(spec.clone(), vec![], 6, 13);
    let ens = run_ensemble(&cfg).unwrap();
    let grid = radial_grid(0.1, 0.85, 0.05);
    let profile = chi_tilde(&spec, &grid, &RadialOptions::default()).unwrap();
    let rep = radial_esd_cdf(&ens, &profile).unwrap();
    for (r, f) in rep.r.iter().zip(&rep.theory) {
        assert!((f - r * r).abs() <= 1e-6);
    }
    assert!(rep.summary.median <= 0.05, "{:?}", rep.summary);
    assert!(rep.to_csv().starts_with("r,F,F_hat\n"));
}

#[test]
fn local_circular_law_targets() {
    let spec = SigmaSpectrum::identity(256);
    let cfg = EnsembleConfig::new(spec.clone(), vec![], 6, 14);
    let ens = run_ensemble(&cfg).unwrap();
    let mut grid = radial_grid(0.2, 0.8, 0.005);
    grid.extend(radial_grid(1.2, 1.8, 0.005));
    let chi = chi_tilde(&spec, &grid, &RadialOptions::default()).unwrap();
    // inside the disk chi~ = 1 around the window, so the target is (1/pi) int F = 1/4
    let inside = local_circular_test(&ens, C::new(0.0, 0.5), 0.25, &chi).unwrap();
    assert!((inside.target - 0.25).abs() <= 1e-6, "{}", inside.target);
    assert!(inside.summary.median <= 0.1, "{:?}", inside.summary);
    // outside the disk both sides vanish
    let outside = local_circular_test(&ens, C::new(1.5, 0.0), 0.25, &chi).unwrap();
    assert!(outside.target.abs() <= 1e-6);
    let bound = 5.0 * outside.scale * 256f64.powf(0.05);
    assert!(outside.summary.median <= bound);
    // the window must not reach the unit circle
    assert!(local_circular_test(&ens, C::new(1.0, 0.0), 0.25, &chi).is_err());
    assert!(local_circular_test(&ens, C::new(0.9, 0.0), 0.25, &chi).is_err());
}
