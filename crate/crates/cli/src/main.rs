//! `txlaw`: singular-value densities, support edges, radial eigenvalue
//! profiles and Monte Carlo checks for `TX` from the command line.
//!
//! Every command writes its artifacts plus a `manifest.json` into `--out`.
//! Exit status: 0 on success, 1 on a domain error (or a failed `verify`
//! criterion), 2 on a usage error.

mod commands;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use txlaw::montecarlo::{TMode, XDist};

#[derive(Parser, Debug)]
#[command(name = "txlaw", version, about = "Spectral laws of TX - z for deterministic T and random X")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate rho_2c(x, z); writes density.csv and bands.json.
    Density(Common),
    /// Locate the support edges; writes edges.json.
    Edges(Common),
    /// Radial profile U, chi~, F of the eigenvalue density; writes radial.csv.
    Chi(ChiArgs),
    /// Classical locations gamma_j, j = 1..N; writes quantiles.csv.
    Quantiles(Common),
    /// Monte Carlo runs of TX; writes eigenvalues.csv, singular.csv, runs.json.
    Simulate(Common),
    /// Statistical checks of the deterministic laws; writes verify.json.
    Verify(VerifyArgs),
    /// Fast end-to-end sanity checks; writes selfcheck.json.
    Selfcheck(Common),
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Spectrum file (`s`, `l`, `N`, `M` or `d`); the identity if omitted.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// |z|, or the real shift for `simulate`.
    #[arg(long)]
    pub z: Option<f64>,
    /// Minimum ||z|^2 - 1| accepted by the engine.
    #[arg(long, default_value_t = 0.05)]
    pub zband: f64,
    /// Rows of T; rescales the multiplicities of the spectrum file.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    /// Columns of T and rows of X.
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Imaginary part used before extrapolating to the real axis.
    #[arg(long, default_value_t = 1e-7)]
    pub eta0: f64,
    /// Density resolution (density, quantiles), scan points (edges) or
    /// number of radii (chi).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker cap; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value = "gauss")]
    pub dist: XDist,
    #[arg(long, default_value = "diagonal")]
    pub tmode: TMode,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ChiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.1)]
    pub rmin: f64,
    #[arg(long, default_value_t = 2.0)]
    pub rmax: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Closed-form oracles and Stieltjes consistency.
    Engine,
    /// Radial ESD of TX and the local circular law.
    CircularLaw,
    /// Averaged local law for m_2 down to eta = 5/N.
    LocalLaw,
    /// Rigidity of bulk singular values.
    Rigidity,
    /// Kolmogorov distance of the singular-value ESD.
    Esd,
    All,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(String),
}

impl From<txlaw::Error> for Failure {
    fn from(e: txlaw::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = match &cli.command {
        Command::Density(c) | Command::Edges(c) | Command::Quantiles(c) | Command::Simulate(c) | Command::Selfcheck(c) => {
            c.threads
        }
        Command::Chi(a) => a.common.threads,
        Command::Verify(a) => a.common.threads,
    };
    let result = txlaw::par::with_threads(threads, || match cli.command {
        Command::Density(c) => commands::density(&c),
        Command::Edges(c) => commands::edges(&c),
        Command::Chi(a) => commands::chi(&a),
        Command::Quantiles(c) => commands::quantiles(&c),
        Command::Simulate(c) => commands::simulate(&c),
        Command::Verify(a) => verify::run(&a),
        Command::Selfcheck(c) => verify::selfcheck(&c),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
