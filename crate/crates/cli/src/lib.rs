//! Command-line front end: argument parsing, configuration and artifact
//! emission for nested functional clustering.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod store;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nestclust::gdp::{GdpParams, NestedShapes, Truncation};

use crate::commands::{BoundArgs, Design, SimulateArgs, StructureArgs};
use crate::config::RunConfig;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "nestclust", version, about = "Bayesian nonparametric clustering of replicated curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset and its true labels.
    Simulate(SimulateCmd),
    /// Fit the mean or nested model and archive the retained draws.
    Fit(FitCmd),
    /// Incidence matrix, point partition and curve bands from archives.
    Summarize(SummarizeCmd),
    /// Gelman-Rubin diagnostics across chains.
    Diagnose(DiagnoseCmd),
    /// Prior cluster-growth tables and truncation bounds.
    #[command(subcommand)]
    Gdp(GdpCmd),
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    /// three-means or confounded.
    #[arg(long, default_value = "three-means")]
    pub design: String,
    #[arg(long, default_value_t = 10)]
    pub subjects_per_group: usize,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    /// Noise as a fraction of the minimum separation (three-means) or as a
    /// standard deviation (confounded).
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    /// Dataset CSV with header subject_id,replicate_id,x,y.
    pub dataset: PathBuf,
    /// Flat key = value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mean or nested [default: nested].
    #[arg(long)]
    pub model: Option<String>,
    /// Truncation level of the subject-level process [default: 40].
    #[arg(long = "K")]
    pub k: Option<String>,
    /// Truncation level of the curve-level process [default: 30].
    #[arg(long = "L")]
    pub l: Option<String>,
    /// Total sweeps per chain, burn-in included [default: 3000].
    #[arg(long)]
    pub sweeps: Option<String>,
    /// Sweeps discarded before draws are retained [default: 1000].
    #[arg(long)]
    pub burnin: Option<String>,
    /// Keep every thin-th sweep after burn-in [default: 1].
    #[arg(long)]
    pub thin: Option<String>,
    /// Independent chains, run in parallel [default: 2].
    #[arg(long)]
    pub chains: Option<String>,
    /// Master seed; chain seeds are derived from it [default: 1].
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory, one chain_<c> subdirectory per chain.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SummarizeCmd {
    /// Fit output directories or individual chain directories.
    #[arg(required = true)]
    pub archives: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Points in the curve reconstruction grid.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseCmd {
    #[arg(required = true)]
    pub archives: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GdpCmd {
    /// Expected and simulated cluster counts for n = 1..N (growth.csv).
    Growth {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// L1 truncation bound of the nested prior; K and L accept `inf`.
    Bound {
        #[arg(long)]
        a1: f64,
        #[arg(long)]
        b1: f64,
        #[arg(long, default_value_t = 1.0)]
        a2: f64,
        #[arg(long, default_value_t = 1.0)]
        b2: f64,
        #[arg(long = "K")]
        k: String,
        #[arg(long = "L")]
        l: String,
        #[arg(long = "J")]
        j: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean cluster count and largest-cluster size along a shape curve
    /// (structure.csv).
    Structure {
        /// Fixed a/(a+b); omit to trace the Dirichlet process (a = 1).
        #[arg(long)]
        mean_fraction: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        total_min: f64,
        #[arg(long, default_value_t = 50.0)]
        total_max: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 20000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Configuration from defaults, the optional file and flag overrides.
pub fn fit_config(cmd: &FitCmd) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cmd.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("model", &cmd.model),
        ("K", &cmd.k),
        ("L", &cmd.l),
        ("sweeps", &cmd.sweeps),
        ("burnin", &cmd.burnin),
        ("thin", &cmd.thin),
        ("chains", &cmd.chains),
        ("seed", &cmd.seed),
        ("out", &cmd.out),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gdp_params(a: f64, b: f64) -> CliResult<GdpParams> {
    GdpParams::new(a, b).map_err(CliError::from_core_settings)
}

fn truncation(s: &str) -> CliResult<Truncation> {
    s.parse().map_err(CliError::from_core_settings)
}

/// Execute a parsed command, returning any text meant for standard output.
pub fn execute(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Simulate(c) => {
            let args = SimulateArgs {
                design: c.design.parse::<Design>()?,
                subjects_per_group: c.subjects_per_group,
                replicates: c.replicates,
                noise: c.noise,
                seed: c.seed,
                out: c.out,
            };
            commands::simulate(&args)?;
            Ok(String::new())
        }
        Command::Fit(c) => {
            let cfg = fit_config(&c)?;
            let manifests = commands::fit(&cfg, &c.dataset)?;
            let draws: u64 = manifests.iter().map(|m| m.draws).sum();
            Ok(format!("{} chains, {draws} retained draws, config {}\n", manifests.len(), cfg.hash()))
        }
        Command::Summarize(c) => {
            commands::summarize(&c.archives, &c.out, c.grid)?;
            Ok(String::new())
        }
        Command::Diagnose(c) => {
            commands::diagnose(&c.archives, &c.out)?;
            Ok(String::new())
        }
        Command::Gdp(GdpCmd::Growth { a, b, n, reps, seed, out }) => {
            commands::growth(gdp_params(a, b)?, n, reps, seed, &out)?;
            Ok(String::new())
        }
        Command::Gdp(GdpCmd::Bound { a1, b1, a2, b2, k, l, j, n, out }) => {
            let args = BoundArgs { shapes: NestedShapes { a1, b1, a2, b2 }, k: truncation(&k)?, l: truncation(&l)?, j, n };
            let v = commands::bound(&args, out.as_deref())?;
            Ok(format!("{v:e}\n"))
        }
        Command::Gdp(GdpCmd::Structure { mean_fraction, total_min, total_max, points, n, reps, seed, out }) => {
            let args = StructureArgs { mean_fraction, total_min, total_max, points, n, reps, seed };
            commands::structure(&args, &out)?;
            Ok(String::new())
        }
    }
}

/// Parse arguments and run, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("nestclust: {e}");
            e.exit_code()
        }
    }
}
