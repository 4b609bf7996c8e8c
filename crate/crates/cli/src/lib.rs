//! Command-line front end: `rvc fit`, `rvc simulate` and `rvc diagnose`.

pub mod commands;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rvc_core::inference::OutlierLevel;
use rvc_core::{Estimator, FitConfig, RhoConfig};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rvc", version, about = "Robust composite estimation of variance-components mixed models")]
pub struct Cli {
    /// Worker threads for simulations (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator to a dataset and report estimates, Wald tests and outliers.
    Fit(FitArgs),
    /// Run a Monte Carlo study over a grid of outlier shifts.
    Simulate(SimulateArgs),
    /// Breakdown constants and outlier flags for a dataset.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    None,
    Ccm,
    Icm,
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: rvc_core::Error| e.to_string())
}

fn parse_level(s: &str) -> Result<OutlierLevel, String> {
    s.parse().map_err(|e: rvc_core::Error| e.to_string())
}

/// Input dataset plus an optional structure override.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Dataset file: JSON, or long-format CSV (`.csv`).
    #[arg(long)]
    pub input: PathBuf,
    /// Structure matrices: `crossed:F,G,H`, `randcoef:a1,...,ap`, or a JSON
    /// file. Required for CSV input; overrides `V` of a JSON dataset.
    #[arg(long)]
    pub v: Option<String>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

/// ρ tuning and optimiser settings.
#[derive(Debug, Args)]
pub struct TuningArgs {
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Right-hand side of the M-scale equation (also sets the breakdown level).
    #[arg(long)]
    pub b: Option<f64>,
    /// Rescale c1, c2 so the M-scale is consistent for bivariate normal distances.
    #[arg(long)]
    pub calibrate: bool,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl TuningArgs {
    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        let d = FitConfig::default();
        let mut rho = RhoConfig {
            c1: self.c1.unwrap_or(d.rho.c1),
            c2: self.c2.unwrap_or(d.rho.c2),
            b: self.b.unwrap_or(d.rho.b),
        };
        if self.c1.is_some() && self.c2.is_none() {
            rho.c2 = rho.c1 * d.rho.c2 / d.rho.c1;
        }
        rho.validate()?;
        if self.calibrate {
            rho = rho.calibrated()?;
        }
        let cfg = FitConfig {
            rho,
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            seed: self.seed,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_parser = parse_estimator, default_value = "composite-tau")]
    pub estimator: Estimator,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Outlier level: cell, couple or row.
    #[arg(long, value_parser = parse_level, default_value = "couple")]
    pub level: OutlierLevel,
    /// Order of the chi-square quantile used as outlier cut-off.
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::None)]
    pub model: ModelKind,
    /// Contamination fraction (ignored with `--model none`).
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Mean of the outlying covariables.
    #[arg(long, default_value_t = 1.0)]
    pub leverage: f64,
    /// Outlier shifts: `start:end:step` or a comma list.
    #[arg(long, default_value = "0:16:1")]
    pub omega0_grid: String,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// `σ_e², σ_a², σ_b², σ_c²`.
    #[arg(long, default_value = "1,1,1,2")]
    pub sigma_sq: String,
    #[arg(long, default_value = "composite-tau,composite-s,classical-s,gaussian-ml")]
    pub estimators: String,
    /// Skip the extra runs around each estimator's worst shift.
    #[arg(long)]
    pub no_refine: bool,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_parser = parse_estimator, default_value = "composite-tau")]
    pub estimator: Estimator,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, value_parser = parse_level, default_value = "couple")]
    pub level: OutlierLevel,
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
}

/// Whether the command's fit(s) converged; drives the exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub converged: bool,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if cli.threads > 0 {
        // a second initialisation (e.g. in tests) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Diagnose(a) => commands::cmd_diagnose(a),
    }
}
