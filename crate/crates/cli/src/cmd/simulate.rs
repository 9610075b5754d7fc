use std::fmt::Write as _;
use std::path::PathBuf;

use clap::ValueEnum;
use tripart_core::scheduler::{compute_budget, simulate, sr_cn, sweep, BudgetMode};

use super::{emit, json_line};
use crate::config::RunConfig;
use crate::error::{validation, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    PerForward,
    PerStep,
}

impl From<Mode> for BudgetMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PerForward => BudgetMode::PerForward,
            Mode::PerStep => BudgetMode::PerStep,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Chunks between slow-model calls.
    #[arg(long)]
    pub n: Option<usize>,
    /// Steps per head forward.
    #[arg(long)]
    pub k: Option<usize>,
    /// Head forward rate in Hz.
    #[arg(long)]
    pub f_fwd: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub chunks: usize,
    #[arg(long)]
    pub flops_brain: Option<f64>,
    #[arg(long)]
    pub flops_fwd: Option<f64>,
    #[arg(long)]
    pub flops_step: Option<f64>,
    /// Control rate for the per-step budget (default K·f_fwd).
    #[arg(long)]
    pub control_hz: Option<f64>,
    /// Lognormal latency jitter sigma.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::PerForward)]
    pub budget_mode: Mode,
    /// Success rate to normalize by the budget.
    #[arg(long)]
    pub success_rate: Option<f64>,
    /// Sweep one axis, e.g. `n=3,5,10`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Write the event trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

pub fn apply(a: &Args, cfg: &mut RunConfig) {
    let s = &mut cfg.schedule;
    if let Some(v) = a.n {
        s.n_interval = v;
    }
    if let Some(v) = a.k {
        s.k_chunk = v;
    }
    if let Some(v) = a.f_fwd {
        s.f_fwd = v;
    }
    if let Some(v) = a.flops_brain {
        s.flops_brain_once = v;
    }
    if let Some(v) = a.flops_fwd {
        s.flops_cere_per_fwd = v;
    }
    if let Some(v) = a.flops_step {
        s.flops_cere_per_step = v;
    }
    if a.control_hz.is_some() {
        s.control_hz = a.control_hz;
    }
    if let Some(v) = a.jitter {
        s.latency.jitter_sigma = v;
    }
}

fn parse_sweep(arg: &str) -> CliResult<Vec<usize>> {
    let (axis, values) = arg.split_once('=').ok_or_else(|| validation(format!("sweep `{arg}` is not axis=v1,v2,...")))?;
    if axis.trim() != "n" {
        return Err(validation(format!("only the `n` axis can be swept, got `{axis}`")));
    }
    values
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| validation(format!("bad sweep value `{v}`"))))
        .collect()
}

fn mode_name(m: BudgetMode) -> &'static str {
    match m {
        BudgetMode::PerForward => "per_forward",
        BudgetMode::PerStep => "per_step",
    }
}

pub fn run(a: &Args, cfg: &RunConfig) -> CliResult<()> {
    let mode: BudgetMode = a.budget_mode.into();
    let sc = &cfg.schedule;
    let mut out = String::new();
    if let Some(spec) = &a.sweep {
        let ns = parse_sweep(spec)?;
        let rows = sweep(sc, &ns, a.chunks, cfg.seed(), mode)?;
        writeln!(out, "# budget_mode={} k={} f_fwd={} chunks={}", mode_name(mode), sc.k_chunk, sc.f_fwd, a.chunks).unwrap();
        writeln!(out, "n\tc_budget\tf_eff\tbrain_calls").unwrap();
        for r in rows {
            writeln!(out, "{}\t{:.6e}\t{:.6}\t{}", r.n_interval, r.c_budget, r.f_eff, r.brain_calls).unwrap();
        }
        return emit(None, &out);
    }

    let trace = simulate(sc, a.chunks, cfg.seed())?;
    if let Some(path) = &a.trace {
        let lines: String = trace.events.iter().map(json_line).collect();
        emit(Some(path), &lines)?;
    }
    let s = &trace.summary;
    let budget = compute_budget(sc, mode)?;
    let rows: Vec<(&str, String)> = vec![
        ("chunks", s.chunks.to_string()),
        ("steps", s.steps.to_string()),
        ("brain_calls", s.brain_calls.to_string()),
        ("duration_s", format!("{:.6}", s.duration_s)),
        ("f_fwd_achieved", format!("{:.6}", s.f_fwd_achieved)),
        ("f_eff", format!("{:.6}", s.f_eff)),
        ("mean_brain_ms", format!("{:.3}", s.mean_brain_ms)),
        ("mean_cere_fwd_ms", format!("{:.3}", s.mean_cere_fwd_ms)),
        ("mean_roi_ms", format!("{:.3}", s.mean_roi_ms)),
        ("budget_mode", mode_name(mode).to_string()),
        ("c_budget_flops_per_s", format!("{budget:.6e}")),
    ];
    for (k, v) in rows {
        writeln!(out, "{k}\t{v}").unwrap();
    }
    if let Some(sr) = a.success_rate {
        writeln!(out, "sr_cn\t{:.6e}", sr_cn(sr, budget)?).unwrap();
    }
    emit(None, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parsing() {
        assert_eq!(parse_sweep("n=3,5,10").unwrap(), vec![3, 5, 10]);
        assert!(parse_sweep("k=3").is_err());
        assert!(parse_sweep("n=3,x").is_err());
        assert!(parse_sweep("3,5").is_err());
    }
}
