//! Parallel categorical action head.
//!
//! An encoder-only transformer reads
//! `[context; image; text; state; action queries]` and maps the final hidden
//! state of every `(k, j)` action query through one shared `3 × d_model`
//! projection. A single forward therefore yields the whole `K × D × 3`
//! logit block; nothing is decoded sequentially.

mod backward;
mod forward;
pub mod gradcheck;
mod loss;
mod optim;
mod params;
pub mod train;

pub use backward::{backward, TokenGrads};
pub use forward::{forward, forward_with_cache, forward_with_stats, ForwardCache, ForwardStats};
pub use gradcheck::{batch_loss_and_grad, grad_check, GradCheckReport, Sample};
pub use loss::{
    class_weights_from_frequencies, loss, loss_and_logit_grad, LossBreakdown, LossWeights,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{BlockParams, HeadParams, Modality};
pub use train::{train_toy, CopyTask, TrainOptions, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{Matrix, ProbVector3};
use crate::ternary::{Ternary, TernaryGrid};

/// Shape of the head. Defaults are the full-size configuration; tests and
/// the toy task use much smaller values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub depth: usize,
    pub d_model: usize,
    pub heads: usize,
    pub k_chunk: usize,
    pub d_act: usize,
    pub mlp_ratio: f64,
    /// Learned absolute position table sizes.
    pub max_image_tokens: usize,
    pub max_text_tokens: usize,
    /// Reserved for a relative-position variant; must stay `false`.
    pub relative_positions: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            d_model: 1024,
            heads: 8,
            k_chunk: 20,
            d_act: 16,
            mlp_ratio: 4.0,
            max_image_tokens: 768,
            max_text_tokens: 64,
            relative_positions: false,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.k_chunk == 0 || self.d_act == 0 {
            return Err(invalid("k_chunk and d_act must be at least 1"));
        }
        if self.depth == 0 {
            return Err(invalid("depth must be at least 1"));
        }
        if !(self.mlp_ratio > 0.0) || self.hidden_dim() == 0 {
            return Err(invalid(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio)));
        }
        if self.relative_positions {
            return Err(invalid("relative positional encodings are not implemented"));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        (self.d_model as f64 * self.mlp_ratio).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn num_queries(&self) -> usize {
        self.k_chunk * self.d_act
    }
}

/// Token inputs for one forward pass. Image and text blocks may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBundle {
    pub context: Matrix,
    pub image: Matrix,
    pub text: Matrix,
    pub state: Matrix,
}

impl TokenBundle {
    pub fn check(&self, cfg: &HeadConfig) -> Result<()> {
        let d = cfg.d_model;
        for (name, m) in [
            ("context", &self.context),
            ("image", &self.image),
            ("text", &self.text),
            ("state", &self.state),
        ] {
            if m.cols() != d && !(m.rows() == 0 && m.cols() == 0) {
                return Err(invalid(format!(
                    "{name} tokens are {} wide, head expects d_model = {d}",
                    m.cols()
                )));
            }
        }
        if self.state.rows() != 1 {
            return Err(invalid(format!("expected exactly one state token, got {}", self.state.rows())));
        }
        if self.image.rows() > cfg.max_image_tokens {
            return Err(invalid(format!(
                "{} image tokens exceed the position table ({})",
                self.image.rows(),
                cfg.max_image_tokens
            )));
        }
        if self.text.rows() > cfg.max_text_tokens {
            return Err(invalid(format!(
                "{} text tokens exceed the position table ({})",
                self.text.rows(),
                cfg.max_text_tokens
            )));
        }
        Ok(())
    }

    pub fn sequence_len(&self, cfg: &HeadConfig) -> usize {
        self.context.rows() + self.image.rows() + self.text.rows() + 1 + cfg.num_queries()
    }
}

/// One forward's output: `K × D` logit triples and their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub k_chunk: usize,
    pub d_act: usize,
    /// Row-major over `(k, j)`.
    pub logits: Vec<[f64; 3]>,
    pub probs: Vec<ProbVector3>,
    pub decisions: Option<TernaryGrid>,
}

impl ActionChunk {
    /// Builds a chunk from raw logits, normalizing with `tau = 1`.
    pub fn from_logits(k_chunk: usize, d_act: usize, logits: Vec<[f64; 3]>) -> Result<Self> {
        if logits.len() != k_chunk * d_act {
            return Err(invalid(format!(
                "{} logit triples for a {k_chunk}x{d_act} chunk",
                logits.len()
            )));
        }
        let probs = logits
            .iter()
            .map(|o| ProbVector3::from_logits(*o, 1.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k_chunk, d_act, logits, probs, decisions: None })
    }

    /// Builds a chunk directly from probabilities (logits become log-probs).
    pub fn from_probs(k_chunk: usize, d_act: usize, probs: Vec<ProbVector3>) -> Result<Self> {
        if probs.len() != k_chunk * d_act {
            return Err(invalid(format!(
                "{} probability triples for a {k_chunk}x{d_act} chunk",
                probs.len()
            )));
        }
        let logits = probs.iter().map(|p| p.log_probs()).collect();
        Ok(Self { k_chunk, d_act, logits, probs, decisions: None })
    }

    pub fn logit(&self, k: usize, j: usize) -> [f64; 3] {
        self.logits[k * self.d_act + j]
    }

    pub fn prob(&self, k: usize, j: usize) -> ProbVector3 {
        self.probs[k * self.d_act + j]
    }

    /// Probabilities for step `k` across all dimensions.
    pub fn step_probs(&self, k: usize) -> &[ProbVector3] {
        &self.probs[k * self.d_act..(k + 1) * self.d_act]
    }

    /// Per-cell argmax decisions.
    pub fn argmax(&self) -> TernaryGrid {
        let data = self.probs.iter().map(|p| Ternary::from_class_index(p.argmax())).collect();
        TernaryGrid::from_vec(self.k_chunk, self.d_act, data).expect("shape is consistent")
    }
}
