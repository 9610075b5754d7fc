use std::io::BufRead;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tripart_core::decoder::{Decoder, EntropyGate};
use tripart_core::ProbVector3;

use super::{emit, json_line};
use crate::config::RunConfig;
use crate::error::{validation, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON lines, each a `K × D × 3` array or an object with `probs` (or
    /// `logits`) and an optional `roi_confident` flag.
    pub input: PathBuf,
    /// Output JSON lines; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Treat bare arrays as logits instead of probabilities.
    #[arg(long)]
    pub logits: bool,
    #[arg(long)]
    pub theta_up: Option<f64>,
    #[arg(long)]
    pub theta_down: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau_start: Option<f64>,
    #[arg(long)]
    pub tau_end: Option<f64>,
    /// Annealing horizon in steps.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub entropy_cap: Option<f64>,
    /// Gate cautious mode per dimension instead of on mean entropy.
    #[arg(long)]
    pub per_dim_gate: bool,
    /// Comma-separated step size per dimension.
    #[arg(long, value_delimiter = ',')]
    pub step_sizes: Option<Vec<f64>>,
}

pub fn apply(a: &Args, cfg: &mut RunConfig) {
    let d = &mut cfg.decoder;
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut d.theta_up, a.theta_up);
    set(&mut d.theta_down, a.theta_down);
    set(&mut d.alpha, a.alpha);
    set(&mut d.tau_start, a.tau_start);
    set(&mut d.tau_end, a.tau_end);
    set(&mut d.entropy_cap, a.entropy_cap);
    if let Some(h) = a.horizon {
        d.anneal_horizon = h;
    }
    if a.per_dim_gate {
        d.entropy_gate = EntropyGate::PerDimension;
    }
    if a.step_sizes.is_some() {
        d.step_sizes = a.step_sizes.clone();
    }
}

type Grid3 = Vec<Vec<[f64; 3]>>;

#[derive(Deserialize)]
#[serde(untagged)]
enum Record {
    Bare(Grid3),
    Tagged {
        #[serde(default)]
        probs: Option<Grid3>,
        #[serde(default)]
        logits: Option<Grid3>,
        #[serde(default = "yes")]
        roi_confident: bool,
    },
}

fn yes() -> bool {
    true
}

enum Values {
    Probs(Grid3),
    Logits(Grid3),
}

/// One executed step, as written to the trace.
#[derive(Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub chunk: usize,
    pub k: usize,
    pub decisions: Vec<i8>,
    pub command: Vec<f64>,
    pub tau: f64,
    pub conservative: bool,
}

pub fn run(a: &Args, cfg: &RunConfig) -> CliResult<()> {
    let file = std::fs::File::open(&a.input)?;
    let mut decoder: Option<Decoder> = None;
    let mut out = String::new();
    let mut chunk = 0usize;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| validation(format!("{}:{}: {msg}", a.input.display(), lineno + 1));
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let (values, roi_ok) = match rec {
            Record::Bare(g) if a.logits => (Values::Logits(g), true),
            Record::Bare(g) => (Values::Probs(g), true),
            Record::Tagged { probs: Some(p), logits: None, roi_confident } => (Values::Probs(p), roi_confident),
            Record::Tagged { probs: None, logits: Some(l), roi_confident } => (Values::Logits(l), roi_confident),
            Record::Tagged { .. } => return Err(bad("expected exactly one of `probs` or `logits`".into())),
        };
        let steps = match &values {
            Values::Probs(g) | Values::Logits(g) => g,
        };
        let dims = steps.first().map_or(0, Vec::len);
        if dims == 0 || steps.iter().any(|s| s.len() != dims) {
            return Err(bad("every step needs the same non-zero number of dimensions".into()));
        }
        let dec = match &mut decoder {
            Some(d) if d.config().dims() == dims => d,
            Some(d) => return Err(bad(format!("{dims} dimensions, earlier records had {}", d.config().dims()))),
            None => decoder.insert(Decoder::new(cfg.decoder_config(dims)?)?),
        };
        for (k, row) in steps.iter().enumerate() {
            let o = match &values {
                Values::Probs(_) => {
                    let p = row
                        .iter()
                        .map(|v| ProbVector3::new(v[0], v[1], v[2]))
                        .collect::<tripart_core::Result<Vec<_>>>()
                        .map_err(|e| bad(format!("step {k}: {e}")))?;
                    dec.step_probs(&p, roi_ok)?
                }
                Values::Logits(_) => dec.step_logits(row, roi_ok)?,
            };
            out.push_str(&json_line(&StepRecord {
                step: dec.state().step - 1,
                chunk,
                k,
                decisions: o.decisions.iter().map(|d| d.to_i8()).collect(),
                command: o.command,
                tau: o.tau,
                conservative: o.conservative.iter().any(|&c| c),
            }));
        }
        chunk += 1;
    }
    if decoder.is_none() {
        return Err(validation(format!("{} contains no records", a.input.display())));
    }
    emit(a.output.as_deref(), &out)
}
