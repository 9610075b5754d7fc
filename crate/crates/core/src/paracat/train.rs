//! Synthetic copy task used to exercise the head end to end.
//!
//! The state token carries the target grid: component `k·D + j` holds
//! `amplitude · y_{k,j}`. Context, image and text tokens are Gaussian
//! distractors. The head must route each query to its own component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gradcheck::{batch_loss_and_grad, Sample};
use super::optim::{AdamW, AdamWConfig};
use super::{forward, HeadConfig, HeadParams, LossWeights, TokenBundle};
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;
use crate::ternary::{Ternary, TernaryGrid};

/// Declarative description of the copy task (loadable from TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopyTask {
    pub context_tokens: usize,
    pub image_tokens: usize,
    pub text_tokens: usize,
    pub distractor_std: f64,
    pub state_amplitude: f64,
    pub batch_size: usize,
    pub eval_samples: usize,
}

impl Default for CopyTask {
    fn default() -> Self {
        Self {
            context_tokens: 2,
            image_tokens: 1,
            text_tokens: 1,
            distractor_std: 1.0,
            state_amplitude: 1.0,
            batch_size: 16,
            eval_samples: 256,
        }
    }
}

impl CopyTask {
    pub fn validate(&self, cfg: &HeadConfig) -> Result<()> {
        if cfg.num_queries() > cfg.d_model {
            return Err(invalid(format!(
                "copy task needs K·D ({}) <= d_model ({})",
                cfg.num_queries(),
                cfg.d_model
            )));
        }
        if self.batch_size == 0 || self.eval_samples == 0 {
            return Err(invalid("batch_size and eval_samples must be positive"));
        }
        if self.image_tokens > cfg.max_image_tokens || self.text_tokens > cfg.max_text_tokens {
            return Err(invalid("task token counts exceed the head's position tables"));
        }
        if !(self.distractor_std >= 0.0) || !(self.state_amplitude > 0.0) {
            return Err(invalid("distractor_std must be >= 0 and state_amplitude > 0"));
        }
        Ok(())
    }

    /// Panics if the task does not fit `cfg`; see [`CopyTask::validate`].
    pub fn sample<R: Rng>(&self, cfg: &HeadConfig, rng: &mut R) -> Sample {
        let d = cfg.d_model;
        let noise = Normal::new(0.0, self.distractor_std.max(f64::MIN_POSITIVE)).expect("valid std");
        let mut tokens = |n: usize| Matrix::from_fn(n, d, |_, _| noise.sample(rng));
        let context = tokens(self.context_tokens);
        let image = tokens(self.image_tokens);
        let text = tokens(self.text_tokens);
        let labels: Vec<Ternary> =
            (0..cfg.num_queries()).map(|_| Ternary::from_class_index(rng.gen_range(0..3))).collect();
        let mut state = Matrix::zeros(1, d);
        for (i, y) in labels.iter().enumerate() {
            state.set(0, i, self.state_amplitude * y.as_f64());
        }
        Sample {
            bundle: TokenBundle { context, image, text, state },
            labels: TernaryGrid::from_vec(cfg.k_chunk, cfg.d_act, labels).expect("K·D labels"),
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// `None` uses [`LossWeights::training_defaults`].
    pub loss: Option<LossWeights>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { steps: 2000, seed: 0, optimizer: AdamWConfig::default(), loss: None }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: HeadParams,
    /// Mean batch loss at every step.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    /// Held-out argmax accuracy per action dimension `j`.
    pub per_dim_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Per-dimension argmax accuracy on `samples`.
pub fn evaluate(params: &HeadParams, cfg: &HeadConfig, samples: &[Sample]) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; cfg.d_act];
    let mut counts = vec![0usize; cfg.d_act];
    for s in samples {
        let pred = forward(&s.bundle, params, cfg)?.argmax();
        for k in 0..cfg.k_chunk {
            if s.mask.as_ref().is_some_and(|m| !m[k]) {
                continue;
            }
            for j in 0..cfg.d_act {
                counts[j] += 1;
                hits[j] += usize::from(pred.get(k, j) == s.labels.get(k, j));
            }
        }
    }
    Ok(hits.iter().zip(&counts).map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 }).collect())
}

/// Trains a freshly initialized head on the copy task. Deterministic in
/// `opts.seed`.
pub fn train_toy(task: &CopyTask, cfg: &HeadConfig, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    task.validate(cfg)?;
    let lw = opts.loss.clone().unwrap_or_else(|| LossWeights::training_defaults(cfg.d_act));
    lw.validate(cfg.d_act)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut eval_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_e7a1);

    let mut params = HeadParams::init(cfg, &mut init_rng)?;
    let mut opt = AdamW::new(opts.optimizer.clone(), &params);
    let mut losses = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let batch: Vec<Sample> = (0..task.batch_size).map(|_| task.sample(cfg, &mut data_rng)).collect();
        let (l, grads) = batch_loss_and_grad(&params, cfg, &batch, &lw)?;
        if !l.is_finite() || !grads.is_finite() {
            return Err(Error::NumericalFailure(format!("training diverged at step {step} (loss {l})")));
        }
        opt.step(&mut params, &grads);
        losses.push(l);
    }

    let eval: Vec<Sample> = (0..task.eval_samples).map(|_| task.sample(cfg, &mut eval_rng)).collect();
    let per_dim_accuracy = evaluate(&params, cfg, &eval)?;
    let mean_accuracy = per_dim_accuracy.iter().sum::<f64>() / per_dim_accuracy.len() as f64;
    let final_loss = losses.last().copied().unwrap_or(f64::NAN);
    Ok(TrainReport { params, losses, final_loss, per_dim_accuracy, mean_accuracy })
}
