use serde::{Deserialize, Serialize};

use super::HeadParams;

/// Adam with decoupled weight decay and global-norm clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05, clip_norm: Some(1.0) }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: HeadParams,
    v: HeadParams,
    t: i32,
}

/// Only projection matrices are decayed; norms, biases and embeddings are not.
fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    matches!(leaf, "wq" | "wk" | "wv" | "wo" | "w1" | "w2" | "w_out")
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, like: &HeadParams) -> Self {
        Self { cfg, m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut HeadParams, grads: &HeadParams) -> f64 {
        self.t += 1;
        let norm = grads.tensors().iter().map(|(_, g)| g.sum_squares()).sum::<f64>().sqrt();
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let tensors = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((name, p), (_, g)), ((_, m), (_, v))) in tensors.into_iter().zip(gs).zip(ms.into_iter().zip(vs)) {
            let wd = if decays(&name) { c.weight_decay } else { 0.0 };
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                let gi = g[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + wd * p[i]);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_mask() {
        assert!(decays("block0.wq") && decays("w_out") && decays("block3.w2"));
        assert!(!decays("block0.bq") && !decays("action_queries") && !decays("final_gamma"));
    }
}
