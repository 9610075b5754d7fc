//! Turns per-step class probabilities into held ternary decisions and a
//! smoothed continuous command.
//!
//! Per dimension: switch to `+1` when `p(+1) − p(0) > θ↑`, to `−1` when
//! `p(−1) − p(0) > θ↓`, otherwise keep the previous decision. The command is
//! an EMA of `decision · δ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::labeling::ControlGrid;
use crate::numerics::{entropy, ProbVector3};
use crate::ternary::Ternary;

/// Parameter changes applied when the decoder falls back to cautious mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConservativeOverrides {
    pub tau_multiplier: f64,
    pub theta_boost: f64,
    pub alpha_boost: f64,
}

impl Default for ConservativeOverrides {
    fn default() -> Self {
        Self { tau_multiplier: 1.5, theta_boost: 0.1, alpha_boost: 0.1 }
    }
}

/// Upper bound on the boosted EMA coefficient.
pub const MAX_CONSERVATIVE_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyGate {
    /// Compare the mean entropy over dimensions against the cap.
    Mean,
    /// Each dimension goes cautious on its own entropy.
    PerDimension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub theta_up: f64,
    pub theta_down: f64,
    pub alpha: f64,
    /// Step size per dimension (mm or deg).
    pub step_sizes: Vec<f64>,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Steps over which the temperature falls linearly.
    pub anneal_horizon: u64,
    /// Entropy cap in nats.
    pub entropy_cap: f64,
    pub conservative: ConservativeOverrides,
    pub entropy_gate: EntropyGate,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            theta_up: 0.2,
            theta_down: 0.2,
            alpha: 0.8,
            step_sizes: ControlGrid::default().step_sizes(),
            tau_start: 1.5,
            tau_end: 0.7,
            anneal_horizon: 1000,
            entropy_cap: 0.9,
            conservative: ConservativeOverrides::default(),
            entropy_gate: EntropyGate::Mean,
        }
    }
}

impl DecoderConfig {
    pub fn with_dims(step_sizes: Vec<f64>) -> Self {
        Self { step_sizes, ..Self::default() }
    }

    pub fn dims(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("theta_up", self.theta_up), ("theta_down", self.theta_down)] {
            if !(0.0..1.0).contains(&t) {
                return Err(invalid(format!("{name} = {t} must lie in [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha = {} must lie in [0, 1)", self.alpha)));
        }
        if self.step_sizes.is_empty() || self.step_sizes.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(invalid("step sizes must be positive and finite"));
        }
        if !(self.tau_end > 0.0 && self.tau_start >= self.tau_end && self.tau_start.is_finite()) {
            return Err(invalid(format!(
                "temperature schedule {} -> {} must be positive and non-increasing",
                self.tau_start, self.tau_end
            )));
        }
        if !(self.entropy_cap >= 0.0) {
            return Err(invalid("entropy cap must be non-negative"));
        }
        let c = &self.conservative;
        if !(c.tau_multiplier > 0.0 && c.theta_boost >= 0.0 && c.alpha_boost >= 0.0) {
            return Err(invalid("conservative overrides must be non-negative with a positive multiplier"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderState {
    pub prev_decisions: Vec<Ternary>,
    pub u: Vec<f64>,
    pub step: u64,
    pub conservative: bool,
}

impl DecoderState {
    /// Stationary start: all decisions 0 and a zero command.
    pub fn new(dims: usize) -> Self {
        Self { prev_decisions: vec![Ternary::Zero; dims], u: vec![0.0; dims], step: 0, conservative: false }
    }
}

/// Hysteresis rule for one dimension.
pub fn decide(p: &ProbVector3, prev: Ternary, theta_up: f64, theta_down: f64) -> Ternary {
    let up = p.p_plus - p.p_zero;
    let down = p.p_minus - p.p_zero;
    match (up > theta_up, down > theta_down) {
        (true, true) if up > down => Ternary::Pos,
        (true, true) if down > up => Ternary::Neg,
        (true, true) => prev,
        (true, false) => Ternary::Pos,
        (false, true) => Ternary::Neg,
        (false, false) => prev,
    }
}

pub fn decode_step(probs: &[ProbVector3], state: &DecoderState, cfg: &DecoderConfig) -> Result<Vec<Ternary>> {
    if probs.len() != state.prev_decisions.len() {
        return Err(invalid(format!(
            "{} probability vectors for {} decoder dims",
            probs.len(),
            state.prev_decisions.len()
        )));
    }
    Ok(probs
        .iter()
        .zip(&state.prev_decisions)
        .map(|(p, &prev)| decide(p, prev, cfg.theta_up, cfg.theta_down))
        .collect())
}

/// `u_t = α u_{t−1} + (1 − α)(decision ⊙ δ)`
pub fn ema_update(state: &DecoderState, decisions: &[Ternary], cfg: &DecoderConfig) -> Result<Vec<f64>> {
    if decisions.len() != state.u.len() || cfg.dims() != state.u.len() {
        return Err(invalid(format!(
            "EMA dims disagree: {} decisions, {} state, {} step sizes",
            decisions.len(),
            state.u.len(),
            cfg.dims()
        )));
    }
    if state.u.iter().any(|v| !v.is_finite()) {
        return Err(invalid("decoder command is not finite"));
    }
    let a = cfg.alpha;
    Ok(state
        .u
        .iter()
        .zip(decisions)
        .zip(&cfg.step_sizes)
        .map(|((u, d), delta)| a * u + (1.0 - a) * d.as_f64() * delta)
        .collect())
}

/// Linear fall from `tau_start` to `tau_end` over the horizon, then flat.
pub fn anneal_temperature(step: u64, cfg: &DecoderConfig) -> f64 {
    if cfg.anneal_horizon == 0 || step >= cfg.anneal_horizon {
        return cfg.tau_end;
    }
    let frac = step as f64 / cfg.anneal_horizon as f64;
    cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac
}

/// Effective config for one step. Low ROI confidence or mean entropy above
/// the cap raises the temperature, widens the margins and slows the EMA.
pub fn conservative_mode(roi_confident: bool, mean_entropy: f64, cfg: &DecoderConfig) -> DecoderConfig {
    if roi_confident && mean_entropy <= cfg.entropy_cap {
        return cfg.clone();
    }
    cautious(cfg)
}

fn cautious(cfg: &DecoderConfig) -> DecoderConfig {
    let c = cfg.conservative;
    DecoderConfig {
        tau_start: cfg.tau_start * c.tau_multiplier,
        tau_end: cfg.tau_end * c.tau_multiplier,
        theta_up: cfg.theta_up + c.theta_boost,
        theta_down: cfg.theta_down + c.theta_boost,
        alpha: (cfg.alpha + c.alpha_boost).min(MAX_CONSERVATIVE_ALPHA),
        ..cfg.clone()
    }
}

/// What one decoder step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub decisions: Vec<Ternary>,
    pub command: Vec<f64>,
    pub tau: f64,
    pub probs: Vec<ProbVector3>,
    /// Which dimensions ran with the cautious parameters.
    pub conservative: Vec<bool>,
}

/// Stateful decoder for a single control stream.
#[derive(Debug, Clone)]
pub struct Decoder {
    cfg: DecoderConfig,
    state: DecoderState,
}

impl Decoder {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let state = DecoderState::new(cfg.dims());
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = DecoderState::new(self.cfg.dims());
    }

    /// One step from raw logits (`D` rows of three). The entropy gate is
    /// evaluated at the scheduled temperature; cautious dimensions are then
    /// re-tempered with the raised temperature.
    pub fn step_logits(&mut self, logits: &[[f64; 3]], roi_confident: bool) -> Result<DecodeOutput> {
        let d = self.cfg.dims();
        if logits.len() != d {
            return Err(invalid(format!("{} logit rows for {d} decoder dims", logits.len())));
        }
        let step = self.state.step;
        let tau = anneal_temperature(step, &self.cfg);
        let base: Vec<ProbVector3> =
            logits.iter().map(|l| ProbVector3::from_logits(*l, tau)).collect::<Result<_>>()?;
        let entropies: Vec<f64> = base.iter().map(|p| entropy(&p.to_array())).collect::<Result<_>>()?;
        let mean_h = entropies.iter().sum::<f64>() / d as f64;

        let careful = cautious(&self.cfg);
        let flags: Vec<bool> = match self.cfg.entropy_gate {
            EntropyGate::Mean => {
                let on = conservative_mode(roi_confident, mean_h, &self.cfg) != self.cfg;
                vec![on; d]
            }
            EntropyGate::PerDimension => {
                entropies.iter().map(|&h| !roi_confident || h > self.cfg.entropy_cap).collect()
            }
        };
        let careful_tau = anneal_temperature(step, &careful);

        let mut probs = Vec::with_capacity(d);
        let mut decisions = Vec::with_capacity(d);
        let mut command = Vec::with_capacity(d);
        for j in 0..d {
            let (cfg, p) = if flags[j] {
                (&careful, ProbVector3::from_logits(logits[j], careful_tau)?)
            } else {
                (&self.cfg, base[j])
            };
            let dec = decide(&p, self.state.prev_decisions[j], cfg.theta_up, cfg.theta_down);
            let u = cfg.alpha * self.state.u[j] + (1.0 - cfg.alpha) * dec.as_f64() * cfg.step_sizes[j];
            probs.push(p);
            decisions.push(dec);
            command.push(u);
        }
        if command.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::NumericalFailure(format!("decoder command at step {step} is not finite")));
        }
        self.state.prev_decisions.clone_from(&decisions);
        self.state.u.clone_from(&command);
        self.state.step += 1;
        self.state.conservative = flags.iter().any(|&f| f);
        let tau = if self.state.conservative && flags.iter().all(|&f| f) { careful_tau } else { tau };
        Ok(DecodeOutput { decisions, command, tau, probs, conservative: flags })
    }

    /// One step from probabilities. Temperature is applied by treating
    /// `ln p` as logits.
    pub fn step_probs(&mut self, probs: &[ProbVector3], roi_confident: bool) -> Result<DecodeOutput> {
        let logits: Vec<[f64; 3]> = probs.iter().map(|p| p.log_probs()).collect();
        self.step_logits(&logits, roi_confident)
    }
}
