//! Fixed-ratio dual-rate loop: the slow model runs once every `N` chunks,
//! the head produces `K` steps per forward, and steps are executed without
//! re-forwarding.

use std::sync::{Condvar, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Per-call latencies in milliseconds. `jitter_sigma > 0` multiplies each
/// draw by a mean-one lognormal factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub brain_once_ms: f64,
    pub cere_fwd_ms: f64,
    pub roi_ms: f64,
    pub jitter_sigma: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { brain_once_ms: 250.0, cere_fwd_ms: 40.0, roi_ms: 5.0, jitter_sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Chunks between slow-model calls.
    pub n_interval: usize,
    pub k_chunk: usize,
    /// Head forward rate in Hz.
    pub f_fwd: f64,
    /// Control rate for the per-step budget; defaults to `K · f_fwd`.
    pub control_hz: Option<f64>,
    pub flops_brain_once: f64,
    pub flops_cere_per_fwd: f64,
    pub flops_cere_per_step: f64,
    pub latency: LatencyModel,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            n_interval: 5,
            k_chunk: 20,
            f_fwd: 2.0,
            control_hz: None,
            flops_brain_once: 1.0e13,
            flops_cere_per_fwd: 2.0e11,
            flops_cere_per_step: 1.0e10,
            latency: LatencyModel::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_interval == 0 || self.k_chunk == 0 {
            return Err(invalid("N and K must be at least 1"));
        }
        if !(self.f_fwd > 0.0 && self.f_fwd.is_finite()) {
            return Err(invalid(format!("forward rate {} must be positive", self.f_fwd)));
        }
        if let Some(f) = self.control_hz {
            if !(f > 0.0 && f.is_finite()) {
                return Err(invalid(format!("control rate {f} must be positive")));
            }
        }
        for (name, v) in [
            ("flops_brain_once", self.flops_brain_once),
            ("flops_cere_per_fwd", self.flops_cere_per_fwd),
            ("flops_cere_per_step", self.flops_cere_per_step),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be non-negative")));
            }
        }
        let l = &self.latency;
        if [l.brain_once_ms, l.cere_fwd_ms, l.roi_ms, l.jitter_sigma].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("latencies and jitter must be non-negative"));
        }
        Ok(())
    }

    pub fn control_rate(&self) -> f64 {
        self.control_hz.unwrap_or(self.k_chunk as f64 * self.f_fwd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BrainCall,
    CereForward,
    StepExec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub kind: EventKind,
    pub chunk: usize,
    pub step: Option<usize>,
    pub latency_ms: f64,
    /// Which slow-model call's tokens the head used; `None` before the
    /// first call has landed.
    pub context_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub chunks: usize,
    pub steps: usize,
    pub brain_calls: usize,
    pub duration_s: f64,
    pub f_fwd_achieved: f64,
    pub f_eff: f64,
    pub mean_brain_ms: f64,
    /// Head forward plus ROI preparation.
    pub mean_cere_fwd_ms: f64,
    pub mean_roi_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub events: Vec<TraceEvent>,
    pub summary: ScheduleSummary,
}

struct Jitter {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl Jitter {
    fn draw(&mut self, base_ms: f64) -> f64 {
        if self.sigma == 0.0 {
            return base_ms;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        base_ms * (self.sigma * z - 0.5 * self.sigma * self.sigma).exp()
    }
}

/// Runs the loop for `chunks` chunks on a simulated clock.
///
/// Each chunk lasts `max(1/f_fwd, forward latency)`. A slow-model call is
/// issued at the head of every group of `N` chunks, overlaps that chunk, and
/// its tokens are used from the next chunk on. Steps are spread evenly over
/// the chunk.
pub fn simulate(cfg: &ScheduleConfig, chunks: usize, seed: u64) -> Result<ScheduleTrace> {
    cfg.validate()?;
    if chunks == 0 {
        return Err(invalid("simulate needs at least one chunk"));
    }
    let k = cfg.k_chunk;
    let mut jitter = Jitter { rng: ChaCha8Rng::seed_from_u64(seed), sigma: cfg.latency.jitter_sigma };
    let nominal = 1.0 / cfg.f_fwd;
    let mut events = Vec::with_capacity(chunks * (k + 1) + chunks / cfg.n_interval + 1);
    let mut t = 0.0;
    let mut brain_calls = 0usize;
    let mut latest_landed: Option<usize> = None;
    let (mut brain_ms, mut fwd_ms, mut roi_ms) = (0.0, 0.0, 0.0);

    for c in 0..chunks {
        let epoch_in_use = latest_landed;
        if c % cfg.n_interval == 0 {
            let lat = jitter.draw(cfg.latency.brain_once_ms);
            brain_ms += lat;
            events.push(TraceEvent { t, kind: EventKind::BrainCall, chunk: c, step: None, latency_ms: lat, context_epoch: None });
            latest_landed = Some(brain_calls);
            brain_calls += 1;
        }
        let roi = jitter.draw(cfg.latency.roi_ms);
        let fwd = jitter.draw(cfg.latency.cere_fwd_ms) + roi;
        roi_ms += roi;
        fwd_ms += fwd;
        events.push(TraceEvent {
            t,
            kind: EventKind::CereForward,
            chunk: c,
            step: None,
            latency_ms: fwd,
            context_epoch: epoch_in_use,
        });
        let period = nominal.max(fwd / 1000.0);
        for s in 0..k {
            events.push(TraceEvent {
                t: t + period * s as f64 / k as f64,
                kind: EventKind::StepExec,
                chunk: c,
                step: Some(s),
                latency_ms: 0.0,
                context_epoch: epoch_in_use,
            });
        }
        t += period;
    }

    let steps = chunks * k;
    let summary = ScheduleSummary {
        chunks,
        steps,
        brain_calls,
        duration_s: t,
        f_fwd_achieved: chunks as f64 / t,
        f_eff: steps as f64 / t,
        mean_brain_ms: brain_ms / brain_calls as f64,
        mean_cere_fwd_ms: fwd_ms / chunks as f64,
        mean_roi_ms: roi_ms / chunks as f64,
    };
    Ok(ScheduleTrace { events, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// `(1/N)·brain + f·per_step`, with `f` the control rate.
    PerStep,
    /// `(1/N)·brain + f_fwd·per_fwd`.
    PerForward,
}

/// Compute budget in FLOPs per second.
pub fn compute_budget(cfg: &ScheduleConfig, mode: BudgetMode) -> Result<f64> {
    cfg.validate()?;
    let amortized = cfg.flops_brain_once / cfg.n_interval as f64;
    Ok(match mode {
        BudgetMode::PerStep => amortized + cfg.control_rate() * cfg.flops_cere_per_step,
        BudgetMode::PerForward => amortized + cfg.f_fwd * cfg.flops_cere_per_fwd,
    })
}

/// Compute-normalized success, in successes per (FLOPs/s).
pub fn sr_cn(success_rate: f64, c_budget: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&success_rate) {
        return Err(invalid(format!("success rate {success_rate} outside [0, 1]")));
    }
    if !(c_budget > 0.0 && c_budget.is_finite()) {
        return Err(invalid(format!("compute budget {c_budget} must be positive")));
    }
    Ok(success_rate / c_budget)
}

/// Rough transformer cost, `2 · params · tokens`. For reporting only.
pub fn estimate_transformer_flops(params: u64, tokens: u64) -> f64 {
    2.0 * params as f64 * tokens as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_interval: usize,
    pub c_budget: f64,
    pub f_eff: f64,
    pub brain_calls: usize,
    pub mode: BudgetMode,
}

/// Budget and effective rate across slow-model intervals.
pub fn sweep(cfg: &ScheduleConfig, ns: &[usize], chunks: usize, seed: u64, mode: BudgetMode) -> Result<Vec<SweepRow>> {
    ns.iter()
        .map(|&n| {
            let c = ScheduleConfig { n_interval: n, ..cfg.clone() };
            let trace = simulate(&c, chunks, seed)?;
            Ok(SweepRow {
                n_interval: n,
                c_budget: compute_budget(&c, mode)?,
                f_eff: trace.summary.f_eff,
                brain_calls: trace.summary.brain_calls,
                mode,
            })
        })
        .collect()
}

/// Single-slot hand-off from the slow worker to the control loop. A new
/// post replaces any context not yet taken.
#[derive(Debug, Default)]
pub struct ContextMailbox<T> {
    slot: Mutex<Option<T>>,
    ready: Condvar,
}

impl<T> ContextMailbox<T> {
    pub fn new() -> Self {
        Self { slot: Mutex::new(None), ready: Condvar::new() }
    }

    /// Returns the context that was overwritten, if any.
    pub fn post(&self, value: T) -> Option<T> {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        let old = slot.replace(value);
        self.ready.notify_all();
        old
    }

    pub fn try_take(&self) -> Option<T> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).take()
    }

    /// Blocks until a context is available.
    pub fn take(&self) -> T {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(v) = slot.take() {
                return v;
            }
            slot = self.ready.wait(slot).unwrap_or_else(|e| e.into_inner());
        }
    }
}
