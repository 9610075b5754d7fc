use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripart_core::cache::{read_archive, shuffle_prompt_fields, validate, write_archive, CacheManifest, Dtype, ReadMode, TensorEntry, PROMPT_FIELDS};
use tripart_core::pons::{compile_context, LayerFeatures, LayerId, LayerSpec, PonsConfig, PonsParams};
use tripart_core::Matrix;

use super::{emit, pretty};
use crate::config::RunConfig;
use crate::error::{validation, CliResult};

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Run every integrity check; exits 0 only if all pass.
    Validate {
        path: PathBuf,
        #[arg(long)]
        expect_version_hash: Option<String>,
    },
    /// Print the manifest.
    Inspect { path: PathBuf },
    /// Write a synthetic archive of layer features and pooled context.
    WriteDemo {
        path: PathBuf,
        #[arg(long, default_value = "f16")]
        dtype: String,
        /// Backbone tokens per layer.
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        #[arg(long, default_value_t = 64)]
        d_model: usize,
        #[arg(long, default_value_t = 24)]
        n_context: usize,
        /// Manifest timestamp (UTC seconds).
        #[arg(long, default_value_t = 0)]
        timestamp: u64,
    },
}

pub fn run(c: &Command, cfg: &RunConfig) -> CliResult<()> {
    match c {
        Command::Validate { path, expect_version_hash } => {
            let report = validate(path, expect_version_hash.as_deref());
            let mut out = String::new();
            for check in &report.checks {
                let mark = if check.passed { "PASS" } else { "FAIL" };
                writeln!(out, "{mark}\t{}\t{}", check.name, check.detail).unwrap();
            }
            emit(None, &out)?;
            if report.passed() {
                Ok(())
            } else {
                Err(validation(format!("{} of {} checks failed", report.failures().count(), report.checks.len())))
            }
        }
        Command::Inspect { path } => {
            let r = read_archive(path, ReadMode::Mapped)?;
            emit(None, &pretty(r.manifest()))
        }
        Command::WriteDemo { path, dtype, tokens, d_model, n_context, timestamp } => {
            let dtype: Dtype = dtype.parse()?;
            write_demo(path, dtype, *tokens, *d_model, *n_context, *timestamp, cfg)
        }
    }
}

fn write_demo(path: &Path, dtype: Dtype, tokens: usize, d: usize, nc: usize, timestamp: u64, cfg: &RunConfig) -> CliResult<()> {
    if tokens == 0 {
        return Err(validation("demo archive needs at least one token"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let layers = [LayerId::Early, LayerId::Mid, LayerId::Late];
    let pcfg = PonsConfig {
        d_model: d,
        n_context: nc,
        layers: layers.iter().map(|&layer| LayerSpec { layer, dim: d }).collect(),
        cross_layer_attention: false,
    };
    let params = PonsParams::init(&pcfg, &mut rng)?;
    let features: Vec<LayerFeatures> = layers
        .iter()
        .map(|&layer| LayerFeatures { layer, tokens: Matrix::from_fn(tokens, d, |_, _| rng.gen_range(-1.0..1.0)) })
        .collect();
    let context = compile_context(&features, &params)?.into_matrix();

    let prompt: BTreeMap<String, String> =
        PROMPT_FIELDS.iter().map(|f| (f.to_string(), format!("demo {}", f.replace('_', " ")))).collect();
    let (_, prompt_hash) = shuffle_prompt_fields(&prompt, 0.5, cfg.seed())?;

    let mut tensors = BTreeMap::new();
    let mut entries = Vec::new();
    for f in &features {
        let name = format!("features.{}", f.layer.as_str());
        entries.push(TensorEntry::new(&name, vec![tokens, d], dtype));
        tensors.insert(name, f.tokens.clone());
    }
    entries.push(TensorEntry::new("context", vec![nc, d], dtype));
    tensors.insert("context".into(), context);

    let manifest = CacheManifest {
        version_hash: format!("demo-{:08x}", cfg.seed()),
        dataset_id: "synthetic".into(),
        task_id: "demo".into(),
        big_brain_id: "none".into(),
        tokenizer_id: "none".into(),
        prompt_id: "demo-prompt".into(),
        prompt_hash: format!("{prompt_hash:08x}"),
        layers: layers.iter().map(|l| l.as_str().to_string()).collect(),
        n_context: nc,
        d_model: d,
        k_chunk: cfg.grid.k_chunk,
        timestamp,
        dependencies: BTreeMap::from([("tripart".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
        tensors: entries,
        ..Default::default()
    };
    let written = write_archive(&manifest, &tensors, path)?;
    let mut out = String::new();
    for e in &written.tensors {
        writeln!(out, "{}\t{:?}\t{}\t{} bytes\tcrc {:08x}", e.name, e.shape, e.dtype.as_str(), e.length, e.crc32).unwrap();
    }
    emit(None, &out)
}
