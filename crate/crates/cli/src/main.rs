//! `charflow` command-line tool.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "charflow", version, about = "Train, evaluate and export characteristic trajectory fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset from the configured scene.
    Synth(Common),
    /// Fit and/or train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compute the evaluation report for a checkpoint.
    Eval(Common),
    /// Sample a field onto a grid file.
    Export(Common),
    /// Trace pathlines of random particles.
    Pathlines(Common),
}

fn setup(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.out = Some(out.clone());
    }
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        cfg.train.threads = n;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(c) => commands::synth(&setup(&c)?),
        Command::Train { common, resume } => commands::train(&setup(&common)?, resume.as_deref()),
        Command::Eval(c) => commands::eval(&setup(&c)?).map(drop),
        Command::Export(c) => commands::export(&setup(&c)?).map(drop),
        Command::Pathlines(c) => commands::pathline_cmd(&setup(&c)?).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHARFLOW_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
