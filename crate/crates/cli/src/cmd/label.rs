use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Deserialize;
use tripart_core::cache::{write_archive, CacheManifest, Dtype, TensorEntry};
use tripart_core::labeling::{align_to_grid, calibrate_deadband, label_trajectory, Smoothing};
use tripart_core::Matrix;

use super::emit;
use crate::config::RunConfig;
use crate::error::{validation, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON trajectory: `{"timestamps": [...], "deltas": [[...], ...]}`.
    pub input: PathBuf,
    /// Output archive path.
    #[arg(long)]
    pub output: PathBuf,
    /// Position step in mm.
    #[arg(long)]
    pub step_mm: Option<f64>,
    /// Rotation step in degrees.
    #[arg(long)]
    pub step_deg: Option<f64>,
    /// Steps per chunk.
    #[arg(long)]
    pub k: Option<usize>,
    /// Odd majority window; 0 disables smoothing.
    #[arg(long)]
    pub smoothing: Option<usize>,
    /// Stationary noise samples (JSON rows) for deadband calibration.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long, default_value = "unversioned")]
    pub version_hash: String,
    #[arg(long, default_value = "local")]
    pub dataset_id: String,
    #[arg(long, default_value = "task")]
    pub task_id: String,
    /// Manifest timestamp (UTC seconds).
    #[arg(long, default_value_t = 0)]
    pub timestamp: u64,
}

pub fn apply(a: &Args, cfg: &mut RunConfig) {
    let g = &mut cfg.grid;
    if let Some(v) = a.step_mm {
        g.step_mm = v;
    }
    if let Some(v) = a.step_deg {
        g.step_deg = v;
    }
    if let Some(v) = a.k {
        g.k_chunk = v;
    }
    if let Some(v) = a.smoothing {
        g.smoothing_window = v;
    }
}

#[derive(Deserialize)]
struct Trajectory {
    timestamps: Vec<f64>,
    deltas: Vec<Vec<f64>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> CliResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
}

pub fn run(a: &Args, cfg: &RunConfig) -> CliResult<()> {
    let traj: Trajectory = read_json(&a.input)?;
    let dims = traj.deltas.first().map_or(0, Vec::len);
    if dims == 0 {
        return Err(validation("trajectory has no deltas"));
    }
    let mut grid = cfg.grid.grid(dims)?;
    if let Some(noise) = &a.noise {
        let samples: Vec<Vec<f64>> = read_json(noise)?;
        grid.deadband = calibrate_deadband(&samples, &grid)?;
    }
    let labeled = label_trajectory(traj.timestamps, traj.deltas, &grid)?;
    let smoothing = match cfg.grid.smoothing_window {
        0 => Smoothing::Off,
        w => Smoothing::Majority(w),
    };
    let k = cfg.grid.k_chunk;
    let chunks = align_to_grid(&labeled.labels, k, smoothing)?;
    let t = labeled.labels.rows();

    let mut labels = Matrix::zeros(chunks.len() * k, dims);
    let mut mask = Matrix::zeros(chunks.len(), k);
    for (c, ch) in chunks.iter().enumerate() {
        for s in 0..k {
            mask.set(c, s, f64::from(u8::from(ch.mask[s])));
            for j in 0..dims {
                labels.set(c * k + s, j, ch.labels.get(s, j).as_f64());
            }
        }
    }
    let mut tensors = BTreeMap::new();
    tensors.insert("labels".to_string(), labels);
    tensors.insert("mask".to_string(), mask);
    tensors.insert("weights".to_string(), Matrix::from_vec(1, t, labeled.weights.clone())?);
    tensors.insert("deltas".to_string(), Matrix::from_rows(&labeled.deltas)?);
    tensors.insert("deadband".to_string(), Matrix::from_vec(1, dims, grid.deadband.clone())?);
    tensors.insert("timestamps".to_string(), Matrix::from_vec(1, t, labeled.timestamps.clone())?);

    let manifest = CacheManifest {
        version_hash: a.version_hash.clone(),
        dataset_id: a.dataset_id.clone(),
        task_id: a.task_id.clone(),
        k_chunk: k,
        timestamp: a.timestamp,
        dependencies: BTreeMap::from([("tripart".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
        tensors: vec![
            TensorEntry::new("labels", vec![chunks.len() * k, dims], Dtype::F32),
            TensorEntry::new("mask", vec![chunks.len(), k], Dtype::F32),
            TensorEntry::new("weights", vec![t], Dtype::F64),
            TensorEntry::new("deltas", vec![t, dims], Dtype::F64),
            TensorEntry::new("deadband", vec![dims], Dtype::F64),
            TensorEntry::new("timestamps", vec![t], Dtype::F64),
        ],
        ..Default::default()
    };
    write_archive(&manifest, &tensors, &a.output)?;

    let mut out = String::new();
    let count = |v: i8| labeled.labels.as_slice().iter().filter(|l| l.to_i8() == v).count();
    writeln!(out, "frames\t{t}").unwrap();
    writeln!(out, "dims\t{dims}").unwrap();
    writeln!(out, "chunks\t{}", chunks.len()).unwrap();
    writeln!(out, "labels_neg_zero_pos\t{}\t{}\t{}", count(-1), count(0), count(1)).unwrap();
    writeln!(out, "min_weight\t{:.6}", labeled.weights.iter().cloned().fold(1.0, f64::min)).unwrap();
    writeln!(out, "archive\t{}", a.output.display()).unwrap();
    emit(None, &out)
}
