use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod cmd;
mod config;
mod error;
mod repro;

use config::RunConfig;
use error::{CliResult, EXIT_OK, EXIT_USAGE};

/// Dual-rate categorical action runtime: scheduling, decoding, labeling,
/// feature caches, timing and a toy training loop.
#[derive(Debug, Parser)]
#[command(name = "tripart", version, arg_required_else_help = true)]
struct Cli {
    /// TOML run file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed (falls back to the run file, then SAIVLA_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the reproducibility stanza and default outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the fixed-ratio loop and report rates and compute budget.
    Simulate(cmd::simulate::Args),
    /// Decode a probability stream into ternary decisions and commands.
    Decode(cmd::decode::Args),
    /// Quantize a demonstration into chunked ternary labels.
    Label(cmd::label::Args),
    /// Inspect, validate or create feature cache archives.
    #[command(subcommand)]
    Cache(cmd::cache::Command),
    /// Run the timing protocol on the built-in workloads.
    Bench(cmd::bench::Args),
    /// Train the head on the synthetic copy task.
    TrainToy(cmd::train::Args),
    /// Stability metrics for a decode trace.
    Metrics(cmd::metrics::Args),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Decode(_) => "decode",
            Command::Label(_) => "label",
            Command::Cache(_) => "cache",
            Command::Bench(_) => "bench",
            Command::TrainToy(_) => "train-toy",
            Command::Metrics(_) => "metrics",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed, cli.out_dir)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Simulate(a) => cmd::simulate::apply(a, &mut cfg),
        Command::Decode(a) => cmd::decode::apply(a, &mut cfg),
        Command::Label(a) => cmd::label::apply(a, &mut cfg),
        Command::TrainToy(a) => cmd::train::apply(a, &mut cfg),
        Command::Cache(_) | Command::Bench(_) | Command::Metrics(_) => {}
    }
    repro::write(&cfg.output_dir(), name, &cfg)?;
    match &cli.command {
        Command::Simulate(a) => cmd::simulate::run(a, &cfg),
        Command::Decode(a) => cmd::decode::run(a, &cfg),
        Command::Label(a) => cmd::label::run(a, &cfg),
        Command::Cache(c) => cmd::cache::run(c, &cfg),
        Command::Bench(a) => cmd::bench::run(a, &cfg),
        Command::TrainToy(a) => cmd::train::run(a, &cfg),
        Command::Metrics(a) => cmd::metrics::run(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::from(EXIT_OK),
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
