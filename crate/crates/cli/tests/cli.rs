use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn txlaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txlaw")).args(args).output().expect("binary runs")
}

fn bimodal_cfg(dir: &Path) -> PathBuf {
    let path = dir.join("bimodal.cfg");
    fs::write(&path, "s = [32/17, 2/17]\nl = [50, 50]\nN = 100\nM = 100\n").unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn density_writes_table_bands_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bimodal_cfg(tmp.path());
    let out = tmp.path().join("d");
    let o = txlaw(&["density", "--sigma", cfg.to_str().unwrap(), "--z", "1.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("density.csv")).unwrap();
    assert!(csv.starts_with("x,rho2c\n"));
    assert!(csv.lines().count() > 100);
    let bands: Value = serde_json::from_str(&fs::read_to_string(out.join("bands.json")).unwrap()).unwrap();
    assert_eq!(bands["bands"].as_array().unwrap().len(), 1);

    let m = manifest(&out);
    assert_eq!(m["command"], "density");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["inputs_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["arguments"]["zband"], 0.05);
    assert_eq!(m["effective"]["density"]["resolution"], 2000);
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert!(m["parallel"].is_boolean());
}

#[test]
fn excluded_band_is_a_domain_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = txlaw(&["density", "--z", "1.0", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("excluded band"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(txlaw(&["density", "--bogus"]).status.code(), Some(2));
    assert_eq!(txlaw(&["density", "--out", out]).status.code(), Some(2));
    assert_eq!(txlaw(&["simulate", "--dist", "cauchy"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.cfg");
    assert_eq!(
        txlaw(&["edges", "--sigma", missing.to_str().unwrap(), "--z", "1.5", "--out", out]).status.code(),
        Some(2)
    );
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "s = [1, 2\nN = 4\n").unwrap();
    assert_eq!(
        txlaw(&["edges", "--sigma", bad.to_str().unwrap(), "--z", "1.5", "--out", out]).status.code(),
        Some(2)
    );
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let nested = blocker.join("sub");
    assert_eq!(txlaw(&["edges", "--z", "1.5", "--out", nested.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_reruns_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bimodal_cfg(tmp.path());
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let o = txlaw(&[
            "simulate", "--sigma", cfg.to_str().unwrap(), "--N", "40", "--M", "30", "--runs", "3", "--z", "1.2",
            "--seed", "5", "--dist", "skewed", "--tmode", "haar", "--threads", threads, "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", "1");
    let b = run("b", "0");
    for f in ["singular.csv", "eigenvalues.csv", "runs.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(manifest(&a)["inputs_hash"], manifest(&b)["inputs_hash"]);
    let eig = fs::read_to_string(a.join("eigenvalues.csv")).unwrap();
    assert!(eig.starts_with("run,re,im\n"));
    assert_eq!(eig.lines().count(), 1 + 3 * 40);
    let runs: Value = serde_json::from_str(&fs::read_to_string(a.join("runs.json")).unwrap()).unwrap();
    for r in runs["runs"].as_array().unwrap() {
        assert_eq!(r["trivial_zeros"], 10);
    }
    assert_eq!(manifest(&a)["spectrum"]["l"], serde_json::json!([15, 15]));
}

#[test]
fn seed_changes_the_inputs_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let out = tmp.path().join(seed);
        let o = txlaw(&["simulate", "--N", "10", "--runs", "1", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        manifest(&out)["inputs_hash"].clone()
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn chi_and_quantiles_have_documented_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bimodal_cfg(tmp.path());
    let out = tmp.path().join("c");
    let o = txlaw(&[
        "chi", "--sigma", cfg.to_str().unwrap(), "--rmin", "0.1", "--rmax", "2.0", "--grid", "20", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("radial.csv")).unwrap();
    assert!(csv.starts_with("r,U,chi,F\n"));
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(manifest(&out)["arguments"]["rmax"], 2.0);

    let out = tmp.path().join("q");
    let o = txlaw(&["quantiles", "--sigma", cfg.to_str().unwrap(), "--z", "0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("quantiles.csv")).unwrap();
    assert!(csv.starts_with("j,gamma_j\n"));
    let gamma: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(gamma.len(), 100);
    assert!(gamma.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn verify_engine_reports_each_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bimodal_cfg(tmp.path());
    let out = tmp.path().join("v");
    let o = txlaw(&["verify", "--suite", "engine", "--sigma", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["suite"], "engine");
    assert_eq!(v["passed"], true);
    let names: Vec<&str> = v["criteria"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["marchenko-pastur", "circular-law-limit", "stieltjes-consistency", "density-mass"]);
}

#[test]
fn verify_esd_small_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = txlaw(&["verify", "--suite", "esd", "--N", "200", "--runs", "5", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("singular-esd [PASS]"));
}

#[test]
fn selfcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = txlaw(&["selfcheck", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("selfcheck.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
}
