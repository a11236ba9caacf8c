//! Command-line front end for SVT-regularized Fréchet regression.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};

/// Environment variable holding the worker thread count; defaults to the
/// number of logical cores.
pub const THREADS_ENV: &str = "FRECHET_SVT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "frechet-svt", version, about = "SVT-regularized Fréchet regression with error-prone covariates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo campaign and write results.csv and profile.csv.
    Simulate(SimulateArgs),
    /// Fit on a training table and predict at query covariates.
    FitPredict(FitPredictArgs),
    /// Noise diagnostics and bound checks for a clean/noisy design pair.
    Diagnose(DiagnoseArgs),
    /// Check the matrix identities and perturbation bounds on random instances.
    VerifyLemmas(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Campaign file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Value(f64),
    Auto,
}

impl FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(LambdaArg::Value(v)),
            _ => Err(format!("expected a finite non-negative number or \"auto\", got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitPredictArgs {
    /// Training table: x1..xp followed by response columns.
    #[arg(long)]
    pub train: PathBuf,
    /// Query covariates: x1..xp.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum)]
    pub kind: data::KindArg,
    /// Threshold value, or "auto" to pick the grid point with the smallest holdout error.
    #[arg(long, default_value = "0")]
    pub lambda: LambdaArg,
    /// Holdout table used by --lambda auto.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Number of positive grid values for --lambda auto.
    #[arg(long, default_value_t = frechet_svt::simulation::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Training table on the clean covariates.
    #[arg(long)]
    pub train: PathBuf,
    /// Noisy covariates x1..xp, row-aligned with --train.
    #[arg(long)]
    pub noisy: PathBuf,
    /// Query covariates x1..xp.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum)]
    pub kind: data::KindArg,
    #[arg(long)]
    pub lambda: f64,
    /// Growth-condition constant C_g.
    #[arg(long, default_value_t = 1.0)]
    pub c_g: f64,
    /// Growth-condition exponent.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Growth-condition radius D_g ("inf" for a global condition).
    #[arg(long, default_value_t = f64::INFINITY)]
    pub d_g: f64,
    /// Diameter of the response space.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub diameter: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Corrupt one identity on purpose, to show that violations are caught.
    #[arg(long)]
    pub inject_fault: bool,
    /// Also write manifest.json and verify_report.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sizes the global rayon pool from [`THREADS_ENV`].
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::FitPredict(args) => commands::fit_predict(&args),
        Command::Diagnose(args) => commands::diagnose(&args),
        Command::VerifyLemmas(args) => commands::verify_lemmas(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_flag() {
        assert_eq!("auto".parse::<LambdaArg>(), Ok(LambdaArg::Auto));
        assert_eq!("0.25".parse::<LambdaArg>(), Ok(LambdaArg::Value(0.25)));
        assert!("-1".parse::<LambdaArg>().is_err());
        assert!("inf".parse::<LambdaArg>().is_err());
        assert!("x".parse::<LambdaArg>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
