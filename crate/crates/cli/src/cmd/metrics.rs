use std::io::BufRead;
use std::path::PathBuf;

use tripart_core::metrics::stability_report;
use tripart_core::{Matrix, TernaryGrid};

use super::decode::StepRecord;
use super::{emit, pretty};
use crate::config::RunConfig;
use crate::error::{validation, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Decode trace (JSON lines written by `decode`).
    pub input: PathBuf,
    /// Seconds per step; defaults to `1 / (K · f_fwd)` from the schedule.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(a: &Args, cfg: &RunConfig) -> CliResult<()> {
    let file = std::fs::File::open(&a.input)?;
    let mut decisions = Vec::new();
    let mut commands = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: StepRecord = serde_json::from_str(&line)
            .map_err(|e| validation(format!("{}:{}: {e}", a.input.display(), i + 1)))?;
        decisions.push(r.decisions);
        commands.push(r.command);
    }
    if decisions.is_empty() {
        return Err(validation(format!("{} contains no steps", a.input.display())));
    }
    let dec = TernaryGrid::from_i8_rows(&decisions)?;
    let cmd = Matrix::from_rows(&commands)?;
    let dt = a.dt.unwrap_or(1.0 / (cfg.schedule.k_chunk as f64 * cfg.schedule.f_fwd));
    let report = stability_report(&dec, &cmd, dt)?;
    emit(a.output.as_deref(), &pretty(&report))
}
