//! `rootcause`: batch front end for simulation, error extraction, model
//! fitting, attribution, verification and benchmarks.

mod commands;
mod config;
mod error;
mod io;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rootcause_core::attribution::TransformKind;

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "rootcause", version, about = "Patient-specific root cause attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sample data.csv and errors.csv from an SCM document
    Simulate,
    /// Estimate error terms from data and a graph
    Extract,
    /// Fit the diagnosis model on error estimates
    Fit,
    /// Score patients against a fitted model
    Attribute,
    /// Check the counterfactual identities on a discrete SCM
    Verify,
    /// Run detection benchmarks on synthetic scenarios
    Bench,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransformArg {
    Identity,
    Log,
    Logit,
}

impl From<TransformArg> for TransformKind {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Identity => TransformKind::Identity,
            TransformArg::Log => TransformKind::Log,
            TransformArg::Logit => TransformKind::Logit,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML); flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    transform: Option<TransformArg>,
    /// exact or sampled:PERMS
    #[arg(long, global = true, value_name = "SPEC")]
    estimator: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    graph: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    errors: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    patients: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Rows to simulate
    #[arg(long, global = true, value_name = "N")]
    rows: Option<usize>,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} msg={:?}",
                record.level(),
                record.target(),
                record.args().to_string()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = cli.common;
    let flags = Overrides {
        seed: c.seed,
        threads: c.threads,
        output: c.output,
        transform: c.transform.map(Into::into),
        estimator: c.estimator,
        graph: c.graph,
        data: c.data,
        errors: c.errors,
        model: c.model,
        patients: c.patients,
        scenario: c.scenario,
        rows: c.rows,
    };
    if let Some(path) = &c.config {
        if !path.exists() {
            return Err(CliError::input(path, "config file does not exist"));
        }
    }
    let cfg = RunConfig::load(c.config.as_deref(), flags)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Extract => commands::extract(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Attribute => commands::attribute(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Bench => commands::bench(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_logging();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            log::error!("internal error");
            ExitCode::from(3)
        }
    }
}
