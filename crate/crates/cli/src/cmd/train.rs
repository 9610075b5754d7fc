use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use tripart_core::paracat::{train_toy, AdamWConfig, TrainOptions};

use super::{emit, pretty};
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Steps per chunk.
    #[arg(long)]
    pub k: Option<usize>,
    /// Action dimensions.
    #[arg(long)]
    pub d: Option<usize>,
    /// Write a JSON report with the loss curve.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn apply(a: &Args, cfg: &mut RunConfig) {
    let t = &mut cfg.toy;
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.depth {
        t.head.depth = v;
    }
    if let Some(v) = a.d_model {
        t.head.d_model = v;
    }
    if let Some(v) = a.heads {
        t.head.heads = v;
    }
    if let Some(v) = a.k {
        t.head.k_chunk = v;
    }
    if let Some(v) = a.d {
        t.head.d_act = v;
    }
}

#[derive(Serialize)]
struct Report {
    steps: usize,
    seed: u64,
    parameters: usize,
    final_loss: f64,
    per_dim_accuracy: Vec<f64>,
    mean_accuracy: f64,
    losses: Vec<f64>,
}

pub fn run(a: &Args, cfg: &RunConfig) -> CliResult<()> {
    let t = &cfg.toy;
    let opts = TrainOptions {
        steps: t.steps,
        seed: cfg.seed(),
        optimizer: AdamWConfig { lr: t.lr, ..AdamWConfig::default() },
        loss: None,
    };
    let r = train_toy(&t.task, &t.head, &opts)?;
    if let Some(path) = &a.output {
        let report = Report {
            steps: t.steps,
            seed: cfg.seed(),
            parameters: r.params.num_parameters(),
            final_loss: r.final_loss,
            per_dim_accuracy: r.per_dim_accuracy.clone(),
            mean_accuracy: r.mean_accuracy,
            losses: r.losses.clone(),
        };
        emit(Some(path), &pretty(&report))?;
    }
    let mut out = String::new();
    writeln!(out, "steps\t{}", t.steps).unwrap();
    writeln!(out, "parameters\t{}", r.params.num_parameters()).unwrap();
    writeln!(out, "final_loss\t{:.6}", r.final_loss).unwrap();
    let acc: Vec<String> = r.per_dim_accuracy.iter().map(|v| format!("{v:.4}")).collect();
    writeln!(out, "per_dim_accuracy\t{}", acc.join(",")).unwrap();
    writeln!(out, "mean_accuracy\t{:.4}", r.mean_accuracy).unwrap();
    emit(None, &out)
}
