use serde::{Deserialize, Serialize};

use super::ActionChunk;
use crate::error::{invalid, Result};
use crate::numerics::{ProbVector3, PROB_FLOOR};
use crate::ternary::{Ternary, TernaryGrid};

/// Coefficients of the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// One weight per action dimension `j`.
    pub dim_weights: Vec<f64>,
    /// Optional extra weight per true class `(−1, 0, +1)`.
    pub class_weights: Option<[f64; 3]>,
    pub label_smoothing: f64,
    pub lambda_entropy: f64,
    pub lambda_temporal: f64,
}

impl LossWeights {
    /// Unit weights, no smoothing, no regularizers.
    pub fn plain(d_act: usize) -> Self {
        Self {
            dim_weights: vec![1.0; d_act],
            class_weights: None,
            label_smoothing: 0.0,
            lambda_entropy: 0.0,
            lambda_temporal: 0.0,
        }
    }

    /// Training defaults: `ε = 0.05`, `λ_H = λ_T = 1e-3`.
    pub fn training_defaults(d_act: usize) -> Self {
        Self { label_smoothing: 0.05, lambda_entropy: 1e-3, lambda_temporal: 1e-3, ..Self::plain(d_act) }
    }

    pub fn validate(&self, d_act: usize) -> Result<()> {
        if self.dim_weights.len() != d_act {
            return Err(invalid(format!(
                "{} dimension weights for {d_act} action dimensions",
                self.dim_weights.len()
            )));
        }
        if self.dim_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("dimension weights must be positive"));
        }
        if let Some(cw) = self.class_weights {
            if cw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(invalid("class weights must be positive"));
            }
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(invalid(format!("label smoothing {} outside [0, 0.5)", self.label_smoothing)));
        }
        if !(self.lambda_entropy >= 0.0) || !(self.lambda_temporal >= 0.0) {
            return Err(invalid("regularizer coefficients must be non-negative"));
        }
        Ok(())
    }
}

/// Total loss and its unweighted components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Weighted, smoothed cross-entropy summed over cells.
    pub ce: f64,
    /// `Σ H(p_{k,j})`.
    pub entropy: f64,
    /// `Σ_{k≥2} KL(p_{k,j} ‖ p_{k−1,j})` with the previous step held fixed.
    pub temporal: f64,
}

/// Inverse-frequency class weights normalized to mean one and clipped to
/// `[lo, hi]`. Classes that never occur get `hi`.
pub fn class_weights_from_frequencies(labels: &[Ternary], lo: f64, hi: f64) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.class_index()] += 1;
    }
    let n = labels.len().max(1) as f64;
    let inv: Vec<Option<f64>> = counts.iter().map(|&c| (c > 0).then(|| n / (3.0 * c as f64))).collect();
    let mut w = [hi; 3];
    for (i, v) in inv.iter().enumerate() {
        if let Some(v) = v {
            w[i] = v.clamp(lo, hi);
        }
    }
    w
}

/// Loss for one chunk. `mask[k] == false` excludes step `k` (padding).
pub fn loss(chunk: &ActionChunk, labels: &TernaryGrid, mask: Option<&[bool]>, lw: &LossWeights) -> Result<LossBreakdown> {
    Ok(loss_and_logit_grad(chunk, labels, mask, lw)?.0)
}

fn smoothed_target(label: Ternary, eps: f64) -> [f64; 3] {
    let mut t = [eps / 3.0; 3];
    t[label.class_index()] += 1.0 - eps;
    t
}

/// Loss plus its gradient with respect to the chunk logits, which are
/// assumed to have produced `chunk.probs` at unit temperature.
pub fn loss_and_logit_grad(
    chunk: &ActionChunk,
    labels: &TernaryGrid,
    mask: Option<&[bool]>,
    lw: &LossWeights,
) -> Result<(LossBreakdown, Vec<[f64; 3]>)> {
    loss_with_targets(chunk, labels, mask, lw, None)
}

/// Same as [`loss_and_logit_grad`], but the temporal KL for step `k` reads
/// its target from `targets[k − 1]` instead of the chunk itself. Finite
/// difference checks use this to hold the stop-gradient target fixed.
pub(crate) fn loss_with_targets(
    chunk: &ActionChunk,
    labels: &TernaryGrid,
    mask: Option<&[bool]>,
    lw: &LossWeights,
    targets: Option<&[ProbVector3]>,
) -> Result<(LossBreakdown, Vec<[f64; 3]>)> {
    let (kk, dd) = (chunk.k_chunk, chunk.d_act);
    let targets = targets.unwrap_or(&chunk.probs);
    if targets.len() != chunk.probs.len() {
        return Err(invalid("temporal targets do not match the chunk size"));
    }
    if labels.rows() != kk || labels.cols() != dd {
        return Err(invalid(format!(
            "labels are {}x{}, chunk is {kk}x{dd}",
            labels.rows(),
            labels.cols()
        )));
    }
    if let Some(m) = mask {
        if m.len() != kk {
            return Err(invalid(format!("mask has {} steps, chunk has {kk}", m.len())));
        }
    }
    lw.validate(dd)?;
    let live = |k: usize| mask.is_none_or(|m| m[k]);

    let mut grad = vec![[0.0; 3]; kk * dd];
    let (mut ce, mut ent, mut temporal) = (0.0, 0.0, 0.0);

    for k in 0..kk {
        if !live(k) {
            continue;
        }
        for j in 0..dd {
            let idx = k * dd + j;
            let p = chunk.probs[idx].to_array();
            let y = labels.get(k, j);
            let t = smoothed_target(y, lw.label_smoothing);
            let w = lw.dim_weights[j] * lw.class_weights.map_or(1.0, |c| c[y.class_index()]);

            let logp = p.map(|v| v.max(f64::MIN_POSITIVE).ln());
            ce -= w * (0..3).map(|c| t[c] * logp[c]).sum::<f64>();
            for c in 0..3 {
                grad[idx][c] += w * (p[c] - t[c]);
            }

            let plogp = |c: usize| if p[c] > 0.0 { p[c] * logp[c] } else { 0.0 };
            let h = -(0..3).map(plogp).sum::<f64>();
            ent += h;
            for c in 0..3 {
                grad[idx][c] += lw.lambda_entropy * -(plogp(c) + p[c] * h);
            }

            if k >= 1 && live(k - 1) {
                let q = targets[idx - dd].to_array();
                let logq = q.map(|v| v.max(PROB_FLOOR).ln());
                let kl: f64 = (0..3).map(|c| plogp(c) - p[c] * logq[c]).sum();
                temporal += kl;
                for c in 0..3 {
                    let lr = if p[c] > 0.0 { logp[c] - logq[c] } else { 0.0 };
                    grad[idx][c] += lw.lambda_temporal * p[c] * (lr - kl);
                }
            }
        }
    }
    let total = ce + lw.lambda_entropy * ent + lw.lambda_temporal * temporal;
    Ok((LossBreakdown { total, ce, entropy: ent, temporal }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{entropy, kl_div};

    fn chunk_from_probs(k: usize, d: usize, p: [f64; 3]) -> ActionChunk {
        let pv = ProbVector3::new(p[0], p[1], p[2]).unwrap();
        ActionChunk::from_probs(k, d, vec![pv; k * d]).unwrap()
    }

    #[test]
    fn perfect_one_hot_gives_zero() {
        let labels = TernaryGrid::from_i8_rows(&[vec![1, -1], vec![0, 1]]).unwrap();
        let probs = labels
            .as_slice()
            .iter()
            .map(|l| {
                let mut a = [0.0; 3];
                a[l.class_index()] = 1.0;
                ProbVector3::new(a[0], a[1], a[2]).unwrap()
            })
            .collect();
        let chunk = ActionChunk::from_probs(2, 2, probs).unwrap();
        let l = loss(&chunk, &labels, None, &LossWeights::plain(2)).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn uniform_probs_give_kd_ln3() {
        let (k, d) = (5, 4);
        let chunk = chunk_from_probs(k, d, [1.0 / 3.0; 3]);
        let labels = TernaryGrid::zeros(k, d);
        let l = loss(&chunk, &labels, None, &LossWeights::plain(d)).unwrap();
        assert!((l.ce - (k * d) as f64 * 3f64.ln()).abs() < 1e-9);
        assert_eq!(l.total, l.ce);
    }

    #[test]
    fn smoothed_single_cell_matches_hand_expansion() {
        let chunk = chunk_from_probs(1, 1, [0.2, 0.3, 0.5]);
        let labels = TernaryGrid::from_i8_rows(&[vec![1]]).unwrap();
        let lw = LossWeights { label_smoothing: 0.05, ..LossWeights::plain(1) };
        let l = loss(&chunk, &labels, None, &lw).unwrap();
        let off = 0.05 / 3.0;
        let on = 1.0 - 0.05 + 0.05 / 3.0;
        let oracle = -(off * 0.2f64.ln() + off * 0.3f64.ln() + on * 0.5f64.ln());
        assert!((l.ce - oracle).abs() < 1e-12);
        assert!((off - 0.0167).abs() < 1e-4 && (on - 0.9667).abs() < 1e-4);
    }

    #[test]
    fn regularizer_terms_match_scalar_kernels() {
        let probs = vec![
            ProbVector3::new(0.1, 0.6, 0.3).unwrap(),
            ProbVector3::new(0.2, 0.2, 0.6).unwrap(),
            ProbVector3::new(0.5, 0.25, 0.25).unwrap(),
        ];
        let chunk = ActionChunk::from_probs(3, 1, probs.clone()).unwrap();
        let labels = TernaryGrid::zeros(3, 1);
        let lw = LossWeights { lambda_entropy: 0.3, lambda_temporal: 0.7, ..LossWeights::plain(1) };
        let l = loss(&chunk, &labels, None, &lw).unwrap();
        let h: f64 = probs.iter().map(|p| entropy(&p.to_array()).unwrap()).sum();
        let kl = kl_div(&probs[1].to_array(), &probs[0].to_array()).unwrap()
            + kl_div(&probs[2].to_array(), &probs[1].to_array()).unwrap();
        assert!((l.entropy - h).abs() < 1e-12);
        assert!((l.temporal - kl).abs() < 1e-12);
        assert!((l.total - (l.ce + 0.3 * h + 0.7 * kl)).abs() < 1e-12);
    }

    // Central differences with the temporal target frozen at `logits`.
    fn grad_by_fd(logits: &[[f64; 3]], k: usize, d: usize, labels: &TernaryGrid, mask: Option<&[bool]>, lw: &LossWeights) -> Vec<[f64; 3]> {
        let h = 1e-6;
        let frozen = ActionChunk::from_logits(k, d, logits.to_vec()).unwrap().probs;
        let f = |o: &[[f64; 3]]| {
            let c = ActionChunk::from_logits(k, d, o.to_vec()).unwrap();
            loss_with_targets(&c, labels, mask, lw, Some(&frozen)).unwrap().0.total
        };
        let mut out = vec![[0.0; 3]; logits.len()];
        for i in 0..logits.len() {
            for c in 0..3 {
                let mut p = logits.to_vec();
                p[i][c] += h;
                let mut m = logits.to_vec();
                m[i][c] -= h;
                out[i][c] = (f(&p) - f(&m)) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let logits = vec![[0.3, -0.2, 1.1], [-1.0, 0.4, 0.2], [0.9, 0.9, -0.3], [0.0, 2.0, -1.5], [0.1, 0.2, 0.3], [-0.7, 0.0, 0.7]];
        let labels = TernaryGrid::from_i8_rows(&[vec![1, -1], vec![0, 0], vec![-1, 1]]).unwrap();
        let lw = LossWeights {
            dim_weights: vec![1.5, 0.7],
            class_weights: Some([2.0, 0.5, 1.2]),
            label_smoothing: 0.05,
            lambda_entropy: 0.4,
            lambda_temporal: 0.9,
        };
        for mask in [None, Some(&[true, false, true][..])] {
            let chunk = ActionChunk::from_logits(3, 2, logits.clone()).unwrap();
            let (_, g) = loss_and_logit_grad(&chunk, &labels, mask, &lw).unwrap();
            let num = grad_by_fd(&logits, 3, 2, &labels, mask, &lw);
            for (a, b) in g.iter().flatten().zip(num.iter().flatten()) {
                assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn temporal_target_receives_no_gradient() {
        // Only step 0 is labelled wrong-free; step 1 carries the KL. The
        // gradient on step 0 logits must not include a KL contribution.
        let logits = vec![[0.3, -0.2, 1.1], [-1.0, 0.4, 0.2]];
        let chunk = ActionChunk::from_logits(2, 1, logits).unwrap();
        let labels = TernaryGrid::zeros(2, 1);
        let base = loss_and_logit_grad(&chunk, &labels, None, &LossWeights::plain(1)).unwrap().1;
        let lw = LossWeights { lambda_temporal: 5.0, ..LossWeights::plain(1) };
        let with = loss_and_logit_grad(&chunk, &labels, None, &lw).unwrap().1;
        assert_eq!(base[0], with[0]);
        assert_ne!(base[1], with[1]);
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform() {
        let chunk = ActionChunk::from_logits(2, 2, vec![[0.0; 3]; 4]).unwrap();
        let lw = LossWeights { lambda_entropy: 1.0, ..LossWeights::plain(2) };
        let labels = TernaryGrid::zeros(2, 2);
        let base = loss_and_logit_grad(&chunk, &labels, None, &LossWeights::plain(2)).unwrap().1;
        let with = loss_and_logit_grad(&chunk, &labels, None, &lw).unwrap().1;
        for (a, b) in with.iter().flatten().zip(base.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn entropy_gradient_is_linear_in_lambda() {
        let logits = vec![[0.3, -0.2, 1.1], [-1.0, 0.4, 0.2]];
        let chunk = ActionChunk::from_logits(1, 2, logits).unwrap();
        let labels = TernaryGrid::zeros(1, 2);
        let at = |lh: f64| {
            let lw = LossWeights { lambda_entropy: lh, ..LossWeights::plain(2) };
            loss_and_logit_grad(&chunk, &labels, None, &lw).unwrap().1
        };
        let (g0, g1, g2) = (at(0.0), at(0.25), at(0.5));
        for i in 0..2 {
            for c in 0..3 {
                let d1 = g1[i][c] - g0[i][c];
                let d2 = g2[i][c] - g0[i][c];
                assert!((d2 - 2.0 * d1).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn masked_steps_are_excluded() {
        let chunk = chunk_from_probs(3, 1, [0.2, 0.3, 0.5]);
        let labels = TernaryGrid::zeros(3, 1);
        let lw = LossWeights::plain(1);
        let full = loss(&chunk, &labels, None, &lw).unwrap().ce;
        let part = loss(&chunk, &labels, Some(&[true, true, false]), &lw).unwrap().ce;
        assert!((part - full * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes_and_weights() {
        let chunk = chunk_from_probs(2, 2, [1.0 / 3.0; 3]);
        assert!(loss(&chunk, &TernaryGrid::zeros(2, 3), None, &LossWeights::plain(2)).is_err());
        let lw = LossWeights { label_smoothing: 0.5, ..LossWeights::plain(2) };
        assert!(loss(&chunk, &TernaryGrid::zeros(2, 2), None, &lw).is_err());
        let lw = LossWeights { dim_weights: vec![1.0, 0.0], ..LossWeights::plain(2) };
        assert!(loss(&chunk, &TernaryGrid::zeros(2, 2), None, &lw).is_err());
    }

    #[test]
    fn inverse_frequency_weights_are_clipped() {
        let mut labels = vec![Ternary::Zero; 90];
        labels.extend(vec![Ternary::Pos; 10]);
        let w = class_weights_from_frequencies(&labels, 0.5, 2.0);
        assert_eq!(w[0], 2.0);
        // 100/270 before clipping
        assert_eq!(w[1], 0.5);
        assert_eq!(w[2], 2.0);
    }
}
