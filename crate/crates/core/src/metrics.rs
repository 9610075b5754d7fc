//! Stability metrics for decoded streams and a repeat-and-median timing
//! harness.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;
use crate::ternary::{Ternary, TernaryGrid};

/// Fraction of consecutive steps on which each dimension's decision changed.
pub fn jitter_rate(decisions: &TernaryGrid) -> Result<Vec<f64>> {
    let t = decisions.rows();
    if t < 2 {
        return Err(Error::InsufficientData(format!("jitter needs at least 2 steps, got {t}")));
    }
    Ok((0..decisions.cols())
        .map(|j| {
            let flips = (1..t).filter(|&i| decisions.get(i, j) != decisions.get(i - 1, j)).count();
            flips as f64 / (t - 1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JerkStats {
    pub mean_abs: f64,
    pub p95_abs: f64,
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Third backward difference of each command column over `dt³`.
pub fn jerk_series(commands: &Matrix, dt: f64) -> Result<Matrix> {
    let t = commands.rows();
    if t < 4 {
        return Err(Error::InsufficientData(format!("jerk needs at least 4 steps, got {t}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step {dt} must be positive")));
    }
    let dt3 = dt * dt * dt;
    let u = |i: usize, j: usize| commands.get(i, j);
    Ok(Matrix::from_fn(t - 3, commands.cols(), |r, j| {
        let i = r + 3;
        (u(i, j) - 3.0 * u(i - 1, j) + 3.0 * u(i - 2, j) - u(i - 3, j)) / dt3
    }))
}

pub fn jerk(commands: &Matrix, dt: f64) -> Result<Vec<JerkStats>> {
    let s = jerk_series(commands, dt)?;
    Ok((0..s.cols())
        .map(|j| {
            let mut col: Vec<f64> = (0..s.rows()).map(|r| s.get(r, j).abs()).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            JerkStats { mean_abs: col.iter().sum::<f64>() / col.len() as f64, p95_abs: quantile_sorted(&col, 0.95) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub steps: usize,
    pub jitter_rate: Vec<f64>,
    pub jerk: Vec<JerkStats>,
}

impl StabilityReport {
    pub fn mean_jitter(&self) -> f64 {
        self.jitter_rate.iter().sum::<f64>() / self.jitter_rate.len().max(1) as f64
    }

    pub fn mean_abs_jerk(&self) -> f64 {
        self.jerk.iter().map(|j| j.mean_abs).sum::<f64>() / self.jerk.len().max(1) as f64
    }
}

pub fn stability_report(decisions: &TernaryGrid, commands: &Matrix, dt: f64) -> Result<StabilityReport> {
    if decisions.rows() != commands.rows() || decisions.cols() != commands.cols() {
        return Err(invalid("decision and command streams differ in shape"));
    }
    Ok(StabilityReport { steps: decisions.rows(), jitter_rate: jitter_rate(decisions)?, jerk: jerk(commands, dt)? })
}

/// Logit stream hovering on the 0/+1 boundary: both logits are `N(0, σ)`,
/// the `−1` logit sits well below.
pub fn boundary_noise_logits(steps: usize, dims: usize, sigma: f64, seed: u64) -> Result<Vec<Vec<[f64; 3]>>> {
    let n = Normal::new(0.0, sigma).map_err(|e| invalid(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..steps).map(|_| (0..dims).map(|_| [-4.0, n.sample(&mut rng), n.sample(&mut rng)]).collect()).collect())
}

/// Plain per-step argmax with unsmoothed `decision · δ` commands.
pub fn argmax_decode(stream: &[Vec<[f64; 3]>], step_sizes: &[f64]) -> Result<(TernaryGrid, Matrix)> {
    let d = step_sizes.len();
    let mut decisions = TernaryGrid::zeros(stream.len(), d);
    let mut commands = Matrix::zeros(stream.len(), d);
    for (t, row) in stream.iter().enumerate() {
        if row.len() != d {
            return Err(invalid(format!("step {t} has {} dims, expected {d}", row.len())));
        }
        for (j, l) in row.iter().enumerate() {
            let dec = Ternary::from_class_index(crate::numerics::ProbVector3::from_logits(*l, 1.0)?.argmax());
            decisions.set(t, j, dec);
            commands.set(t, j, dec.as_f64() * step_sizes[j]);
        }
    }
    Ok((decisions, commands))
}

/// Runs a fresh decoder over a logit stream.
pub fn hysteresis_decode(stream: &[Vec<[f64; 3]>], cfg: &DecoderConfig, roi_confident: bool) -> Result<(TernaryGrid, Matrix)> {
    let mut dec = Decoder::new(cfg.clone())?;
    let d = cfg.dims();
    let mut decisions = TernaryGrid::zeros(stream.len(), d);
    let mut commands = Matrix::zeros(stream.len(), d);
    for (t, row) in stream.iter().enumerate() {
        let out = dec.step_logits(row, roi_confident)?;
        for j in 0..d {
            decisions.set(t, j, out.decisions[j]);
            commands.set(t, j, out.command[j]);
        }
    }
    Ok((decisions, commands))
}

/// Where and how a timing run was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDescriptor {
    pub device: String,
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub resolution: String,
    pub batch: usize,
}

impl EnvironmentDescriptor {
    pub fn host(resolution: impl Into<String>, batch: usize) -> Self {
        Self {
            device: "cpu".into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            resolution: resolution.into(),
            batch,
        }
    }
}

pub const MIN_REPEATS: usize = 11;
pub const MIN_WARMUP: usize = 3;

pub const STAGE_A_NOTE: &str =
    "Stage-A feature caching is a one-off cost, reported separately and amortized over all downstream training runs.";
pub const INTERVENTION_RATE_NOTE: &str = "not-applicable: requires human-operated trials";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
}

/// Order-free summary of repeat timings.
pub fn summarize(samples_ms: &[f64]) -> TimingSummary {
    let mut s = samples_ms.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    TimingSummary { median_ms: quantile_sorted(&s, 0.5), q1_ms: q1, q3_ms: q3, iqr_ms: q3 - q1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub workload: String,
    pub repeats: usize,
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub summary: TimingSummary,
    pub environment: EnvironmentDescriptor,
    pub stage_a_note: String,
    pub intervention_rate: String,
}

/// Runs `warmup` uncounted calls, then times `repeats` calls on the current
/// thread and reports the median and interquartile range.
pub fn timing_protocol<F>(
    workload: &str,
    mut run: F,
    repeats: usize,
    warmup: usize,
    environment: EnvironmentDescriptor,
) -> Result<TimingReport>
where
    F: FnMut() -> std::result::Result<(), String>,
{
    if repeats < MIN_REPEATS {
        return Err(invalid(format!("at least {MIN_REPEATS} repeats required, got {repeats}")));
    }
    if warmup < MIN_WARMUP {
        return Err(invalid(format!("at least {MIN_WARMUP} warmup runs required, got {warmup}")));
    }
    for i in 0..warmup {
        run().map_err(|m| Error::Workload { repeat: i, message: format!("warmup: {m}") })?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let start = Instant::now();
        run().map_err(|message| Error::Workload { repeat: i, message })?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(TimingReport {
        workload: workload.into(),
        repeats,
        warmup,
        summary: summarize(&samples),
        samples_ms: samples,
        environment,
        stage_a_note: STAGE_A_NOTE.into(),
        intervention_rate: INTERVENTION_RATE_NOTE.into(),
    })
}

/// Per-dimension agreement between two decision grids.
pub fn agreement(a: &TernaryGrid, b: &TernaryGrid) -> Result<Vec<f64>> {
    if a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0 {
        return Err(invalid("grids must share a non-empty shape"));
    }
    Ok((0..a.cols())
        .map(|j| (0..a.rows()).filter(|&i| a.get(i, j) == b.get(i, j)).count() as f64 / a.rows() as f64)
        .collect())
}
