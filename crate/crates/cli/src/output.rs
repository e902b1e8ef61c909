//! Output directory handling and the run manifest.

use std::fs;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use txlaw::density;
use txlaw::sigma::{SigmaSpectrum, SpectrumFile};

use crate::{Common, Failure};

/// The spectrum a command works with and the bytes it was read from.
pub struct Input {
    pub spec: SigmaSpectrum,
    pub source: Vec<u8>,
}

/// Reads `--sigma` (or the identity) and applies `--N` / `--M`.
pub fn load_spectrum(c: &Common) -> Result<Input, Failure> {
    let (spec, source) = match &c.sigma {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let spec = SpectrumFile::parse(&text)
                .and_then(|f| f.into_spectrum())
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            (spec, text.into_bytes())
        }
        None => (SigmaSpectrum::identity(c.n.unwrap_or(500)), b"identity".to_vec()),
    };
    let n = c.n.unwrap_or(spec.n_rows());
    let m = c.m.unwrap_or(spec.n_cols());
    let spec = if (n, m) == (spec.n_rows(), spec.n_cols()) {
        spec
    } else {
        spec.rescaled_dims(n, m).map_err(|e| Failure::Usage(e.to_string()))?
    };
    Ok(Input { spec, source })
}

pub fn require_z(c: &Common, command: &str) -> Result<f64, Failure> {
    match c.z {
        Some(z) if z.is_finite() && z >= 0.0 => Ok(z),
        Some(z) => Err(Failure::Usage(format!("--z must be a finite |z| >= 0, got {z}"))),
        None => Err(Failure::Usage(format!("{command} needs --z"))),
    }
}

/// Collects the artifacts of one command and writes the manifest last.
pub struct Job {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    started_unix: u64,
    outputs: Vec<String>,
}

impl Job {
    pub fn start(command: &'static str, c: &Common) -> Result<Self, Failure> {
        fs::create_dir_all(&c.out)
            .map_err(|e| Failure::Usage(format!("cannot create output directory {}: {e}", c.out.display())))?;
        Ok(Self {
            command,
            out: c.out.clone(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let path = self.out.join(name);
        fs::write(&path, body).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let body = serde_json::to_string_pretty(value).map_err(|e| Failure::Domain(e.to_string()))?;
        self.write(name, &(body + "\n"))
    }

    /// `args` are the parsed flags (defaults included); `effective` holds the
    /// engine options actually used.
    pub fn finish<A: Serialize>(mut self, args: &A, c: &Common, input: &Input, effective: Value) -> Result<(), Failure> {
        let args = serde_json::to_value(args).map_err(|e| Failure::Domain(e.to_string()))?;
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": c.seed,
            "inputs_hash": inputs_hash(self.command, &args, &input.source),
            "arguments": args,
            "effective": effective,
            "spectrum": {
                "s": input.spec.s(),
                "l": input.spec.l(),
                "N": input.spec.n_rows(),
                "M": input.spec.n_cols(),
            },
            "outputs": self.outputs,
            "threads": c.threads,
            "parallel": txlaw::par::is_parallel(),
            "started_unix": self.started_unix,
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
        });
        self.outputs.push("manifest.json".into());
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Domain(e.to_string()))?;
        let path = self.out.join("manifest.json");
        fs::write(&path, body + "\n").map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
    }
}

/// SHA-256 over the command, the spectrum source and the flags that affect
/// results (`out` and `threads` do not).
fn inputs_hash(command: &str, args: &Value, source: &[u8]) -> String {
    let mut args = args.clone();
    if let Some(map) = args.as_object_mut() {
        map.remove("out");
        map.remove("threads");
    }
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(source);
    h.update([0]);
    h.update(args.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `count` evenly spaced radii on `[r_min, r_max]`.
pub fn linspace(r_min: f64, r_max: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![r_min];
    }
    let step = (r_max - r_min) / (count - 1) as f64;
    (0..count).map(|k| r_min + step * k as f64).collect()
}

pub fn default_density_options(c: &Common) -> density::DensityOptions {
    density::DensityOptions {
        resolution: c.grid.unwrap_or(2000),
        eta0: c.eta0,
        solver: solver_options(c),
        ..Default::default()
    }
}

pub fn solver_options(c: &Common) -> txlaw::SolverOptions {
    txlaw::SolverOptions {
        z_band_min: Some(c.zband),
        ..Default::default()
    }
}
