use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripart_core::decoder::Decoder;
use tripart_core::metrics::{timing_protocol, EnvironmentDescriptor, TimingReport, MIN_REPEATS, MIN_WARMUP};
use tripart_core::paracat::{forward, HeadParams};
use tripart_core::pons::{attention_pool, LayerId, LayerSpec, PonsConfig, PonsParams};
use tripart_core::Matrix;

use super::{emit, pretty};
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, default_value_t = MIN_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = MIN_WARMUP)]
    pub warmup: usize,
    /// Also time a constant sleep of this many milliseconds.
    #[arg(long)]
    pub sleep_ms: Option<f64>,
    /// Report path; defaults to `bench.json` in the output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(a: &Args, cfg: &RunConfig) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let head = &cfg.toy.head;
    let task = &cfg.toy.task;
    let mut reports: Vec<TimingReport> = Vec::new();
    let res = format!("{}+{} tokens, d_model {}", task.image_tokens, task.text_tokens, head.d_model);

    let params = HeadParams::init(head, &mut rng)?;
    let sample = task.sample(head, &mut rng);
    reports.push(timing_protocol(
        "head_forward",
        || forward(&sample.bundle, &params, head).map(|_| ()).map_err(|e| e.to_string()),
        a.repeats,
        a.warmup,
        EnvironmentDescriptor::host(res.clone(), 1),
    )?);

    let dcfg = cfg.decoder_config(16)?;
    let mut dec = Decoder::new(dcfg)?;
    let logits: Vec<[f64; 3]> = (0..16).map(|_| [rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(-1.0..1.0)]).collect();
    reports.push(timing_protocol(
        "decoder_step",
        || dec.step_logits(&logits, true).map(|_| ()).map_err(|e| e.to_string()),
        a.repeats,
        a.warmup,
        EnvironmentDescriptor::host("16 dims", 1),
    )?);

    let pcfg = PonsConfig {
        d_model: 64,
        n_context: 24,
        layers: vec![LayerSpec { layer: LayerId::Late, dim: 64 }],
        cross_layer_attention: false,
    };
    let pons = PonsParams::init(&pcfg, &mut rng)?;
    let g = Matrix::from_fn(300, 64, |_, _| rng.gen_range(-1.0..1.0));
    reports.push(timing_protocol(
        "context_pool",
        || attention_pool(&g, &pons).map(|_| ()).map_err(|e| e.to_string()),
        a.repeats,
        a.warmup,
        EnvironmentDescriptor::host("300 tokens, d_model 64", 1),
    )?);

    if let Some(ms) = a.sleep_ms {
        let d = Duration::from_secs_f64(ms.max(0.0) / 1e3);
        reports.push(timing_protocol(
            "sleep",
            || {
                std::thread::sleep(d);
                Ok(())
            },
            a.repeats,
            a.warmup,
            EnvironmentDescriptor::host("n/a", 1),
        )?);
    }

    let path = a.output.clone().unwrap_or_else(|| cfg.output_dir().join("bench.json"));
    emit(Some(&path), &pretty(&reports))?;
    let mut out = String::new();
    writeln!(out, "workload\tmedian_ms\tiqr_ms\trepeats").unwrap();
    for r in &reports {
        writeln!(out, "{}\t{:.4}\t{:.4}\t{}", r.workload, r.summary.median_ms, r.summary.iqr_ms, r.repeats).unwrap();
    }
    writeln!(out, "report\t{}", path.display()).unwrap();
    emit(None, &out)
}
