//! `ets-causal <subcommand> --config <path> [--seed N] [--out DIR]`
//!
//! Exit codes: 0 on success, 1 when estimation fails, 2 for usage and
//! configuration errors. Results go to files in the output directory; the
//! list of written files goes to standard output and diagnostics to
//! standard error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ets_causal::config::RunConfig;
use ets_causal::run::{execute, header, write_artifacts, Stage};
use ets_causal::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ESTIMATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(
    name = "ets-causal",
    version,
    about = "Matched DiD and stochastic frontier analysis of emissions-trading panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel and its hidden truth.
    Simulate(RunArgs),
    /// Load the panel and write descriptive statistics.
    IngestCheck(RunArgs),
    /// Fit the propensity model; write scores and balance diagnostics.
    Propensity(RunArgs),
    /// Write nearest-neighbour match weights.
    Match(RunArgs),
    /// Estimate treatment effects on the configured outcomes.
    Att(RunArgs),
    /// Fit production frontiers per industry and score distances.
    Frontier(RunArgs),
    /// Estimate effects on the distance to the frontier.
    Satt(RunArgs),
    /// Run every stage and write all tables and series.
    Report(RunArgs),
    /// Monte Carlo evaluation on the configured generator.
    Mc(RunArgs),
}

impl Command {
    fn split(self) -> (Stage, RunArgs) {
        match self {
            Command::Simulate(a) => (Stage::Simulate, a),
            Command::IngestCheck(a) => (Stage::IngestCheck, a),
            Command::Propensity(a) => (Stage::Propensity, a),
            Command::Match(a) => (Stage::Match, a),
            Command::Att(a) => (Stage::Att, a),
            Command::Frontier(a) => (Stage::Frontier, a),
            Command::Satt(a) => (Stage::Satt, a),
            Command::Report(a) => (Stage::Report, a),
            Command::Mc(a) => (Stage::MonteCarlo, a),
        }
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (stage, args) = cli.command.split();
    match run_stage(stage, &args) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io(_) => EXIT_USAGE,
                _ => EXIT_ESTIMATION,
            }
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    config.validate()?;
    Ok(config)
}

fn run_stage(stage: Stage, args: &RunArgs) -> Result<Vec<PathBuf>, Error> {
    let config = load_config(args)?;
    let base_dir = args.config.parent().unwrap_or(Path::new("")).to_path_buf();
    let out_dir = match (&args.out, &config.output_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => base_dir.join(dir),
        (None, None) => PathBuf::from(DEFAULT_OUT),
    };
    let artifacts = execute(&config, &base_dir, stage).map_err(|e| match e {
        // A missing input file is a configuration problem, not an estimation failure.
        Error::Io(io) => Error::Config(format!("cannot read input: {io}")),
        other => other,
    })?;
    write_artifacts(&out_dir, &header(&config), &artifacts)
        .map_err(|e| Error::Config(format!("cannot write to {}: {e}", out_dir.display())))?;
    Ok(artifacts.iter().map(|a| out_dir.join(&a.name)).collect())
}
