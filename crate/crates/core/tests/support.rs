use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txlaw::master::{cubic_factorize, eval_f, MasterSolver};
use txlaw::support::{
    check_bulk_regularity, check_edge_regularity, critical_points, edge_exponent_fit, find_edges,
    in_support_by_critical_values, small_w_t, support_indicator, EdgeOptions, EdgeSide,
};
use txlaw::{SigmaSpectrum, SolverOptions, SpectralParameter};

fn diag() -> EdgeOptions {
    EdgeOptions {
        solver: SolverOptions::diagnostic(),
        ..Default::default()
    }
}

fn random_spectrum(rng: &mut ChaCha8Rng) -> SigmaSpectrum {
    let n = rng.random_range(1..=3);
    let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.dedup_by(|a, b| (*a - *b).abs() < 0.05);
    let l = vec![4; s.len()];
    let k = 4 * s.len();
    let raw = SigmaSpectrum::unnormalized(s, l, k, k).unwrap();
    raw.normalize().0
}

#[test]
fn marchenko_pastur_edges() {
    let spec = SigmaSpectrum::identity(4);
    let p = find_edges(&spec, 0.0, &diag()).unwrap();
    assert_eq!(p.bands.len(), 1);
    assert_eq!(p.bands[0][0], 0.0);
    assert!((p.bands[0][1] - 4.0).abs() <= 1e-8);
    assert!(p.zero_edge.is_some());
    let ex = edge_exponent_fit(4.0, EdgeSide::Upper, &spec, 0.0, SolverOptions::diagnostic()).unwrap();
    assert!((0.45..=0.55).contains(&ex), "{ex}");
}

#[test]
fn bimodal_support_shape() {
    let spec = SigmaSpectrum::bimodal(4);
    let outside = find_edges(&spec, 1.5, &EdgeOptions::default()).unwrap();
    assert!(outside.zero_edge.is_none());
    assert!(outside.lowest_edge() >= 0.01);
    for e in &outside.edges {
        assert!(e.e > 0.0 && e.residual_f <= 1e-10 && e.residual_fm <= 1e-8);
    }
    let inside = find_edges(&spec, 0.5, &EdgeOptions::default()).unwrap();
    assert_eq!(inside.lowest_edge(), 0.0);
    let ex = edge_exponent_fit(0.0, EdgeSide::Lower, &spec, 0.5, SolverOptions::default()).unwrap();
    assert!((-0.6..=-0.4).contains(&ex), "{ex}");
    let top = outside.edges[0];
    assert_eq!(top.side, EdgeSide::Upper);
    let ex = edge_exponent_fit(top.e, EdgeSide::Upper, &spec, 1.5, SolverOptions::default()).unwrap();
    assert!((0.4..=0.6).contains(&ex), "{ex}");
}

#[test]
fn indicator_examples() {
    let spec = SigmaSpectrum::bimodal(4);
    let p = find_edges(&spec, 1.5, &EdgeOptions::default()).unwrap();
    assert!(!support_indicator(p.top_edge() + 1.0, &spec, 1.5, &EdgeOptions::default()).unwrap());
    assert!(support_indicator(2.0, &SigmaSpectrum::identity(4), 0.0, &diag()).unwrap());
    assert!(support_indicator(1e-4, &spec, 0.5, &EdgeOptions::default()).unwrap());
}

#[test]
fn critical_value_test_agrees_with_density_scan() {
    let spec = SigmaSpectrum::bimodal(4);
    for z in [0.5, 0.75, 1.2, 1.5] {
        let p = find_edges(&spec, z, &EdgeOptions::default()).unwrap();
        let edges = p.edge_values();
        let top = p.top_edge();
        let mut flips = 0;
        let mut prev: Option<bool> = None;
        for k in 0..400 {
            let e = 1e-4 * (1.3 * top / 1e-4).powf(k as f64 / 399.0);
            if edges.iter().any(|x| (x - e).abs() < 1e-6) {
                continue;
            }
            let inside = in_support_by_critical_values(e, &spec, z).unwrap();
            assert_eq!(inside, p.contains(e), "|z|={z} E={e}");
            if let Some(q) = prev {
                flips += (q != inside) as usize;
            }
            prev = Some(inside);
        }
        assert_eq!(flips, edges.len(), "|z|={z}");
    }
}

#[test]
fn single_eigenvalue_critical_points() {
    let spec = SigmaSpectrum::identity(4);
    let set = critical_points(10.0, &spec, 1.5).unwrap();
    // I_0 = (-c_1, b_1)
    assert_eq!(set.occupancy[1], 2);
    let in_i0: Vec<_> = set.points.iter().filter(|p| p.interval == 0).collect();
    assert_eq!(in_i0.len(), 2);
    // f increases between the two points
    let (lo, hi) = (in_i0[1].m, in_i0[0].m);
    let p = SpectralParameter::real(10.0, 1.5).unwrap();
    let f = |m: f64| eval_f(&p, C::new(m, 0.0), &spec).unwrap().re;
    let mid = 0.5 * (lo + hi);
    assert!(f(mid + 1e-4) > f(mid - 1e-4));
}

/// Counts sign changes of a centered difference of `f` on a fine grid in
/// each interval between poles.
fn sign_change_counts(spec: &SigmaSpectrum, w: f64, z: f64, poles: &[f64]) -> Vec<usize> {
    let p = SpectralParameter::real(w, z).unwrap();
    let f = |m: f64| eval_f(&p, C::new(m, 0.0), spec).unwrap().re;
    let span = poles.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let mut bounds = vec![-50.0 * span];
    bounds.extend_from_slice(poles);
    bounds.push(50.0 * span);
    let mut counts = Vec::new();
    for win in bounds.windows(2) {
        let (a, b) = (win[0], win[1]);
        let pad = 1e-7 * (b - a);
        let n = 40000;
        let mut prev: Option<f64> = None;
        let mut count = 0;
        for k in 0..=n {
            // cluster points toward both ends
            let t = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / n as f64).cos();
            let m = a + pad + (b - a - 2.0 * pad) * t;
            let h = (1e-7 * (1.0 + m.abs())).min(0.1 * (m - a).min(b - m));
            let d = f(m + h) - f(m - h);
            if let Some(q) = prev {
                if (q > 0.0) != (d > 0.0) {
                    count += 1;
                }
            }
            prev = Some(d);
        }
        counts.push(count);
    }
    counts
}

#[test]
fn critical_points_match_sign_changes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..6 {
        let spec = random_spectrum(&mut rng);
        let z = rng.random_range(0.3..2.0);
        let w = 10f64.powf(rng.random_range(-2.0..1.2));
        let set = critical_points(w, &spec, z).unwrap();
        let mut poles: Vec<f64> = set.poles_neg.iter().rev().map(|c| -c).collect();
        poles.extend(&set.poles_pos);
        let oracle = sign_change_counts(&spec, w, z, &poles);
        assert_eq!(oracle, set.occupancy, "w={w} z={z} spec={:?}", spec.s());
    }
}

#[test]
fn factorization_bounds_hold_on_random_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let spec = random_spectrum(&mut rng);
        let z: f64 = rng.random_range(0.05..3.0);
        let w: f64 = 10f64.powf(rng.random_range(-3.0..1.5));
        let q = w.sqrt();
        let zeta = z * z;
        let fac = cubic_factorize(w, z, &spec).unwrap();
        let n = spec.n_distinct();
        for i in 0..n {
            let s = spec.s()[i];
            let (a, b, c) = (fac.a[i], fac.b[i], fac.c[i]);
            assert!(a > z.max((s + zeta) / q) && a < (s + zeta) / q + z, "a");
            assert!(b > 0.0 && b < z.min(zeta / q), "b");
            let c_lo = (-(s + zeta) + ((s + zeta).powi(2) + 4.0 * w * zeta).sqrt()) / (2.0 * q);
            assert!(c < z && c > c_lo * (1.0 - 1e-12), "c");
            let big = (s + zeta + q * z) / w;
            assert!(fac.coef_a[i] > 0.0 && fac.coef_a[i] <= 2.0 * big, "A");
            assert!(fac.coef_b[i] > 0.0 && fac.coef_b[i] <= 2.0 * big, "B");
            assert!(fac.coef_c[i] > 0.0 && fac.coef_c[i] <= big, "C");
            if i > 0 {
                assert!(fac.a[i] < fac.a[i - 1]);
                assert!(fac.b[i] > fac.b[i - 1]);
                assert!(fac.c[i] > fac.c[i - 1]);
            }
        }
    }
}

#[test]
fn occupancy_and_ordering_on_random_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let spec = random_spectrum(&mut rng);
        let z = rng.random_range(0.05..3.0);
        let w = 10f64.powf(rng.random_range(-3.0..1.5));
        let set = critical_points(w, &spec, z).unwrap();
        assert!(set.ordering_ok, "w={w} z={z}");
        assert_eq!(set.points.len() % 2, 0);
    }
}

#[test]
fn poles_move_down_and_mc_moves_up_off_support() {
    let spec = SigmaSpectrum::bimodal(4);
    let z = 1.5;
    let p = find_edges(&spec, z, &EdgeOptions::default()).unwrap();
    let solver = MasterSolver::new(&spec, z, SolverOptions::default()).unwrap();
    let mut prev: Option<(Vec<f64>, f64)> = None;
    for k in 1..40 {
        let e = p.top_edge() + 0.25 * k as f64;
        let fac = cubic_factorize(e, z, &spec).unwrap();
        let mut poles: Vec<f64> = fac.a.iter().chain(&fac.b).copied().collect();
        poles.extend(fac.c.iter().map(|c| -c));
        let sol = solver.solve(C::new(e, 1e-12)).unwrap();
        assert!(sol.m_c.im.abs() <= 1e-8);
        if let Some((pp, pm)) = &prev {
            assert!(poles.iter().zip(pp).all(|(a, b)| a <= b));
            assert!(sol.m_c.re > *pm);
        }
        prev = Some((poles, sol.m_c.re));
    }
}

#[test]
fn separated_two_point_spectra_have_regular_edges() {
    for (hi, z) in [(32.0 / 17.0, 1.5), (32.0 / 17.0, 0.5), (1.5, 2.0), (1.8, 0.75)] {
        let spec = SigmaSpectrum::two_point(hi, 2.0 - hi, 4).unwrap();
        let p = find_edges(&spec, z, &EdgeOptions::default()).unwrap();
        for r in p.regularity(1e-4) {
            assert!(r.regular, "hi={hi} z={z} {r:?}");
        }
        let top = check_edge_regularity(&p.edges[0], 1e-3, &p.edge_values());
        assert!(top.regular);
    }
}

#[test]
fn nearly_closed_gap_is_irregular() {
    // the gap near x = 0.35 at |z| = 0.5 opens as `hi` grows past ~1.96
    let z = 0.5;
    let bands = |hi: f64| {
        let spec = SigmaSpectrum::two_point(hi, 2.0 - hi, 4).unwrap();
        let opts = EdgeOptions {
            scan_points: 20000,
            ..Default::default()
        };
        find_edges(&spec, z, &opts).unwrap()
    };
    let (mut lo, mut hi) = (1.95, 1.98);
    let mut found = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let p = bands(mid);
        if p.bands.len() == 1 {
            lo = mid;
        } else {
            let gap = p.bands[0][0] - p.bands[1][1];
            if gap < 1e-3 {
                found = Some(p);
                break;
            }
            hi = mid;
        }
    }
    let p = found.expect("gap narrower than 1e-3");
    let reports = p.regularity(1e-3);
    let inner: Vec<_> = reports.iter().filter(|r| r.neighbor_gap < 1e-3).collect();
    assert_eq!(inner.len(), 2);
    assert!(inner.iter().all(|r| !r.regular && !r.gap_ok));
}

#[test]
fn bulk_regularity() {
    let mp = SigmaSpectrum::identity(4);
    let r = check_bulk_regularity([0.0, 4.0], &mp, 0.0, 0.2, 0.01, SolverOptions::diagnostic()).unwrap();
    assert!(r.regular);
    // MP density on [0.2, 3.8] is smallest at 3.8
    let oracle = ((4.0_f64 - 3.8) / 3.8).sqrt() / (2.0 * std::f64::consts::PI);
    assert!((r.min_rho1 - oracle).abs() < 1e-6);
    assert!(check_bulk_regularity([0.0, 4.0], &mp, 0.0, 2.0, 0.01, SolverOptions::diagnostic()).is_err());
    let spec = SigmaSpectrum::bimodal(4);
    let p = find_edges(&spec, 1.2, &EdgeOptions::default()).unwrap();
    let r = check_bulk_regularity(p.bands[0], &spec, 1.2, 0.05, 1e-3, SolverOptions::default()).unwrap();
    assert!(r.regular, "{r:?}");
}

#[test]
fn small_w_root_matches_scalar_oracle() {
    let spec = SigmaSpectrum::identity(4);
    // single eigenvalue at |z| = 0.5: t + 0.25 - 1 = 0
    assert!((small_w_t(&spec, 0.5).unwrap() - 0.75).abs() < 1e-12);
    let bimodal = SigmaSpectrum::bimodal(4);
    let t0 = 64.0 / 289.0;
    assert!((bimodal.harmonic_mean_t0() - t0).abs() < 1e-15);
    assert!((small_w_t(&bimodal, 0.01).unwrap() - t0).abs() <= 1e-4);
    // small-|z| expansion: t = t0 + (t0^2 K^-1 sum l/s^2 - 2)|z|^2
    let slope = t0 * t0 * bimodal.s().iter().zip(bimodal.weights()).map(|(s, w)| w / (s * s)).sum::<f64>() - 2.0;
    let t = small_w_t(&bimodal, 0.01).unwrap();
    assert!((t - t0 - slope * 1e-4).abs() < 1e-7, "{}", t - t0 - slope * 1e-4);
    let t = small_w_t(&bimodal, 0.5).unwrap();
    assert!(t >= 0.05f64.powi(4) && t <= 20.0);
    assert!(small_w_t(&bimodal, 1.0).is_err());
}

#[test]
fn profile_serializes() {
    let spec = SigmaSpectrum::bimodal(4);
    let p = find_edges(&spec, 1.5, &EdgeOptions::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
    assert_eq!(v["bands"].as_array().unwrap().len(), 1);
    assert_eq!(v["edges"][0]["side"], "upper");
}
