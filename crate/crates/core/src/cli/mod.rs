//! Command-line front end: configuration, orchestration and reports.

mod commands;
mod config;
mod context;

pub use commands::{operator_checks, Check};
pub use config::{Overrides, RunConfig, RunSection};
pub use context::{constants_block, Anchored, Basics, Derived, REQUIRED_CONSTANTS};

use clap::{Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "knudsen",
    about = "Knudsen-layer solver near the evaporation to condensation transition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// penalization strength (default: picked from the scanned window)
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// bulk velocity; restricts sweeps to this single value
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub u: Option<f64>,
    /// seed for probe-based checks
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// operator cache directory
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// double every node count of the velocity grid
    #[arg(long, global = true)]
    pub refine: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Invariant suites for the grid, the collision operators and the spectral data.
    OperatorCheck,
    /// Slow branch over the u sweep.
    Gep,
    /// One nonlinear boundary-layer solve with Maxwellian wall data.
    Solve {
        #[arg(long, allow_hyphen_values = true)]
        rho_w: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        t_w: Option<f64>,
    },
    /// Roots of the two compatibility conditions along the u list.
    TraceCurve,
    /// Tangent of the curve at the origin from the linear problem.
    Tangent,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::OperatorCheck => "operator-check",
            Command::Gep => "gep",
            Command::Solve { .. } => "solve",
            Command::TraceCurve => "trace-curve",
            Command::Tangent => "tangent",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("solver did not converge: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub constants: BTreeMap<String, Anchored>,
    pub missing_constants: Vec<String>,
    pub results: serde_json::Value,
    /// wall-clock seconds per stage
    pub timing: BTreeMap<String, f64>,
    pub status: String,
    pub exit_code: i32,
}

/// Runs one subcommand, writes `report.json` into the output directory and
/// returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let overrides = Overrides {
        out: cli.out.clone(),
        gamma: cli.gamma,
        u: cli.u,
        seed: cli.seed,
        cache: cli.cache.clone(),
        refine: cli.refine,
    };
    let mut config = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail_early(CliError::Config(e)),
    };
    config.apply(&overrides);
    if let Err(e) = config.validate() {
        return fail_early(CliError::Config(e));
    }
    if let Err(e) = std::fs::create_dir_all(&config.run.out) {
        return fail_early(CliError::Config(format!(
            "{}: {e}",
            config.run.out.display()
        )));
    }
    let mut report = RunReport {
        command: cli.command.name().into(),
        config_hash: config.hash(),
        config: config.clone(),
        constants: BTreeMap::new(),
        missing_constants: Vec::new(),
        results: serde_json::Value::Null,
        timing: BTreeMap::new(),
        status: "running".into(),
        exit_code: 0,
    };
    let start = Instant::now();
    let outcome = commands::dispatch(&cli.command, &config, &mut report);
    report
        .timing
        .insert("total".into(), start.elapsed().as_secs_f64());
    let code = match outcome {
        Ok(()) if report.missing_constants.is_empty() => {
            report.status = "ok".into();
            0
        }
        Ok(()) => {
            let e = CliError::Invariant(format!(
                "constants block is missing {:?}",
                report.missing_constants
            ));
            report.status = e.to_string();
            e.exit_code()
        }
        Err(e) => {
            report.status = e.to_string();
            e.exit_code()
        }
    };
    report.exit_code = code;
    let path = config.run.out.join("report.json");
    match serde_json::to_string_pretty(&report) {
        Ok(text) => {
            if let Err(e) = std::fs::write(&path, text) {
                log::error!("{}: {e}", path.display());
            }
        }
        Err(e) => log::error!("report serialization: {e}"),
    }
    if code == 0 {
        println!("{}: ok ({})", report.command, path.display());
    } else {
        eprintln!("{}: {}", report.command, report.status);
    }
    code
}

/// Parses the command line; usage errors map to the configuration exit code.
pub fn parse_args() -> Result<Cli, i32> {
    match Cli::try_parse() {
        Ok(cli) => Ok(cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            Err(0)
        }
        Err(e) => {
            let _ = e.print();
            Err(CliError::Config(String::new()).exit_code())
        }
    }
}

fn fail_early(e: CliError) -> i32 {
    eprintln!("{e}");
    e.exit_code()
}
