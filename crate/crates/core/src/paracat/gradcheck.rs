//! Central-difference verification of the analytic head gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::loss_with_targets;
use super::{backward, forward, forward_with_cache, loss, loss_and_logit_grad};
use super::{HeadConfig, HeadParams, LossWeights, TokenBundle};
use crate::error::{invalid, Error, Result};
use crate::numerics::ProbVector3;
use crate::ternary::TernaryGrid;

/// One supervised example: tokens, a `K × D` label grid and an optional
/// per-step padding mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub bundle: TokenBundle,
    pub labels: TernaryGrid,
    pub mask: Option<Vec<bool>>,
}

/// Mean loss over `batch`.
pub fn batch_loss(params: &HeadParams, cfg: &HeadConfig, batch: &[Sample], lw: &LossWeights) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut total = 0.0;
    for s in batch {
        let chunk = forward(&s.bundle, params, cfg)?;
        total += loss(&chunk, &s.labels, s.mask.as_deref(), lw)?.total;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn batch_loss_and_grad(
    params: &HeadParams,
    cfg: &HeadConfig,
    batch: &[Sample],
    lw: &LossWeights,
) -> Result<(f64, HeadParams)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for s in batch {
        let (chunk, cache) = forward_with_cache(&s.bundle, params, cfg)?;
        let (l, mut dlogits) = loss_and_logit_grad(&chunk, &s.labels, s.mask.as_deref(), lw)?;
        total += l.total;
        dlogits.iter_mut().flatten().for_each(|g| *g *= scale);
        let (g, _) = backward(params, cfg, &cache, &dlogits);
        for ((_, acc), (_, gi)) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            acc.axpy(1.0, gi);
        }
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares analytic gradients against central differences on `coords`
/// randomly chosen parameters. Relative error uses the denominator
/// `max(|analytic|, 1e-8)`. The temporal KL target is held at its value
/// under `params` while differencing, mirroring its stop-gradient.
pub fn grad_check(
    params: &HeadParams,
    cfg: &HeadConfig,
    batch: &[Sample],
    lw: &LossWeights,
    h: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(invalid(format!("step {h} outside [1e-6, 1e-4]")));
    }
    let (_, grads) = batch_loss_and_grad(params, cfg, batch, lw)?;
    if !grads.is_finite() {
        return Err(Error::NumericalFailure("analytic gradient is not finite".into()));
    }

    let sizes: Vec<(String, usize)> = params.tensors().iter().map(|(n, m)| (n.clone(), m.len())).collect();
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, total, coords.min(total)).into_vec();
    picks.sort_unstable();

    // Stop-gradient targets stay at their unperturbed values.
    let frozen: Vec<Vec<ProbVector3>> = batch
        .iter()
        .map(|s| forward(&s.bundle, params, cfg).map(|c| c.probs))
        .collect::<Result<_>>()?;
    let frozen_loss = |p: &HeadParams| -> Result<f64> {
        let mut total = 0.0;
        for (s, t) in batch.iter().zip(&frozen) {
            let chunk = forward(&s.bundle, p, cfg)?;
            total += loss_with_targets(&chunk, &s.labels, s.mask.as_deref(), lw, Some(t))?.0.total;
        }
        Ok(total / batch.len() as f64)
    };

    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, m)| m.as_slice().to_vec()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: picks.len(),
        worst_tensor: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for flat in picks {
        let (t, off) = locate(&sizes, flat);
        let orig = probe.tensors()[t].1.as_slice()[off];
        set_coord(&mut probe, t, off, orig + h);
        let lp = frozen_loss(&probe)?;
        set_coord(&mut probe, t, off, orig - h);
        let lm = frozen_loss(&probe)?;
        set_coord(&mut probe, t, off, orig);

        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[flat];
        if !numeric.is_finite() {
            return Err(Error::NumericalFailure(format!("numeric gradient for {} is not finite", sizes[t].0)));
        }
        let rel = (a - numeric).abs() / a.abs().max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_tensor = sizes[t].0.clone();
            report.worst_index = off;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

fn locate(sizes: &[(String, usize)], mut flat: usize) -> (usize, usize) {
    for (i, (_, n)) in sizes.iter().enumerate() {
        if flat < *n {
            return (i, flat);
        }
        flat -= n;
    }
    unreachable!("flat index past the last tensor")
}

fn set_coord(p: &mut HeadParams, t: usize, off: usize, v: f64) {
    let mut ts = p.tensors_mut();
    ts[t].1.as_mut_slice()[off] = v;
}
