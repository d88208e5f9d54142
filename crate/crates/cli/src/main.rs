//! `entriage` — entropy-guided test generation and label triage for image
//! classifiers.
//!
//! Exit codes: 0 success, 1 replay found non-reproducing entries,
//! 2 configuration/validation failure, 3 backend/runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::Failure;
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "entriage",
    version,
    about = "Entropy-guided test generation and label triage for image classifiers"
)]
struct Cli {
    /// TOML run configuration (required; flags below override its values).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Shannon-index threshold below which mispredictions are flagged.
    #[arg(long, global = true, value_name = "NATS")]
    tau_low: Option<f64>,

    /// Shannon-index threshold above which correct predictions seed tests.
    #[arg(long, global = true, value_name = "NATS")]
    tau_high: Option<f64>,

    /// Seed for all transform draws.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated transform kinds (pan,rotate2d,affine,perspective).
    #[arg(long, global = true, value_name = "KINDS")]
    transforms: Option<String>,

    /// Classifier backend: builtin:<model>, cache:<csv>, or external:<cmd>.
    #[arg(long, global = true, value_name = "DESCRIPTOR")]
    backend: Option<String>,

    /// Worker threads for prediction and transform trials.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Output directory for run artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict every sample and tabulate Shannon indices.
    Scan,
    /// Warp hesitant-but-correct samples and record prediction flips.
    Generate,
    /// Flag confident mispredictions as likely label problems.
    Detect,
    /// Cross entropy slices with transform kinds into an error-ratio table.
    Matrix,
    /// Re-run generation across a ladder of tau_high values.
    Sweep,
    /// Re-check a recorded errors.jsonl against the live backend.
    Replay {
        /// Path to an errors.jsonl produced by `generate`.
        errors: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let config_path = cli
        .config
        .ok_or_else(|| Failure::config(anyhow::anyhow!("pass --config <FILE>")))?;
    let overrides = Overrides {
        tau_low: cli.tau_low,
        tau_high: cli.tau_high,
        seed: cli.seed,
        transforms: cli.transforms,
        backend: cli.backend,
        workers: cli.workers,
        out: cli.out,
    };
    let config = RunConfig::load(&config_path, &overrides).map_err(Failure::config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Failure::backend(anyhow::anyhow!("cannot build worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Scan => commands::scan(config).map(|()| 0),
        Command::Generate => commands::cmd_generate(config).map(|()| 0),
        Command::Detect => commands::cmd_detect(config).map(|()| 0),
        Command::Matrix => commands::cmd_matrix(config).map(|()| 0),
        Command::Sweep => commands::cmd_sweep(config).map(|()| 0),
        Command::Replay { errors } => commands::cmd_replay(config, &errors),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(failure) => {
            eprintln!("error [{}]: {:#}", failure.stage, failure.error);
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
