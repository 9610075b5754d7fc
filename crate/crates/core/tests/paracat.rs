mod common;

use common::{oracle_logits, random_bundle, random_params, tiny_config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripart_core::paracat::{
    forward, forward_with_stats, grad_check, loss, train_toy, CopyTask, HeadParams, LossWeights, Sample, TrainOptions,
};
use tripart_core::{Ternary, TernaryGrid};

#[test]
fn logits_have_kd3_shape() {
    let cfg = tiny_config(2, 32, 4, 5, 3);
    let p = random_params(&cfg, 1);
    let out = forward(&random_bundle(&cfg, 8, 16, 4, 2), &p, &cfg).unwrap();
    assert_eq!((out.k_chunk, out.d_act, out.logits.len()), (5, 3, 15));
    for pr in &out.probs {
        assert!((pr.p_minus + pr.p_zero + pr.p_plus - 1.0).abs() < 1e-12);
    }
}

#[test]
fn constant_head_emits_output_bias() {
    let cfg = tiny_config(2, 16, 2, 3, 2);
    let mut p = HeadParams::zeros(&cfg);
    p.b_out.set(0, 2, 2f64.ln());
    let out = forward(&random_bundle(&cfg, 4, 3, 2, 7), &p, &cfg).unwrap();
    for pr in &out.probs {
        assert!((pr.p_minus - 0.25).abs() < 1e-12);
        assert!((pr.p_zero - 0.25).abs() < 1e-12);
        assert!((pr.p_plus - 0.5).abs() < 1e-12);
    }
}

#[test]
fn single_block_matches_loop_oracle() {
    for (depth, heads) in [(1, 1), (1, 2), (2, 4)] {
        let cfg = tiny_config(depth, 16, heads, 3, 2);
        let p = random_params(&cfg, 11);
        let b = random_bundle(&cfg, 3, 4, 2, 12);
        let fast = forward(&b, &p, &cfg).unwrap();
        let slow = oracle_logits(&b, &p, &cfg);
        for (a, o) in fast.logits.iter().zip(&slow) {
            for c in 0..3 {
                assert!((a[c] - o[c]).abs() < 1e-9, "depth {depth} heads {heads}: {} vs {}", a[c], o[c]);
            }
        }
    }
}

#[test]
fn one_pass_regardless_of_chunk_length() {
    for k in [1, 5, 20] {
        let cfg = tiny_config(3, 16, 2, k, 2);
        let p = random_params(&cfg, 3);
        let (_, stats) = forward_with_stats(&random_bundle(&cfg, 2, 2, 2, 4), &p, &cfg).unwrap();
        assert_eq!(stats.block_evals, 3);
        assert_eq!(stats.sequence_len, 2 + 2 + 2 + 1 + k * 2);
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let cfg = tiny_config(1, 16, 2, 2, 2);
    let p = random_params(&cfg, 3);
    let mut b = random_bundle(&cfg, 2, 2, 2, 4);
    b.context = tripart_core::Matrix::zeros(2, 15);
    assert!(forward(&b, &p, &cfg).is_err());
    let mut bad = cfg.clone();
    bad.heads = 3;
    assert!(forward(&random_bundle(&cfg, 2, 2, 2, 4), &p, &bad).is_err());
}

#[test]
fn uniform_logits_cost_kd_ln3() {
    let cfg = tiny_config(1, 8, 1, 4, 3);
    let p = HeadParams::zeros(&cfg);
    let chunk = forward(&random_bundle(&cfg, 1, 1, 1, 0), &p, &cfg).unwrap();
    let labels = TernaryGrid::from_vec(4, 3, vec![Ternary::Pos; 12]).unwrap();
    let l = loss(&chunk, &labels, None, &LossWeights::plain(3)).unwrap();
    assert!((l.ce - 12.0 * 3f64.ln()).abs() < 1e-9);
    assert!((l.entropy - 12.0 * 3f64.ln()).abs() < 1e-9);
    assert!(l.temporal.abs() < 1e-12);
}

#[test]
fn loss_is_equivariant_under_dimension_permutation() {
    let cfg = tiny_config(1, 16, 2, 3, 3);
    let p = random_params(&cfg, 5);
    let b = random_bundle(&cfg, 2, 2, 2, 6);
    let chunk = forward(&b, &p, &cfg).unwrap();
    let labels = TernaryGrid::from_i8_rows(&[vec![1, 0, -1], vec![0, 0, 1], vec![-1, 1, 1]]).unwrap();
    let lw = LossWeights { dim_weights: vec![1.0, 2.0, 0.5], ..LossWeights::training_defaults(3) };
    let base = loss(&chunk, &labels, None, &lw).unwrap();

    let perm = [2, 0, 1];
    let logits: Vec<[f64; 3]> = (0..3).flat_map(|k| perm.iter().map(move |&j| (k, j))).map(|(k, j)| chunk.logit(k, j)).collect();
    let permuted = tripart_core::paracat::ActionChunk::from_logits(3, 3, logits).unwrap();
    let plabels = TernaryGrid::from_vec(3, 3, (0..3).flat_map(|k| perm.iter().map(move |&j| (k, j))).map(|(k, j)| labels.get(k, j)).collect()).unwrap();
    let pw = LossWeights { dim_weights: perm.iter().map(|&j| lw.dim_weights[j]).collect(), ..lw.clone() };
    let other = loss(&permuted, &plabels, None, &pw).unwrap();
    assert!((base.total - other.total).abs() < 1e-12);
}

#[test]
fn gradients_match_central_differences() {
    let cfg = tiny_config(2, 16, 2, 3, 2);
    let p = random_params(&cfg, 21);
    let task = CopyTask { context_tokens: 2, image_tokens: 2, text_tokens: 1, ..CopyTask::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut batch: Vec<Sample> = (0..2).map(|_| task.sample(&cfg, &mut rng)).collect();
    batch[1].mask = Some(vec![true, true, false]);
    let lw = LossWeights { class_weights: Some([1.5, 0.7, 1.2]), ..LossWeights::training_defaults(2) };
    let r = grad_check(&p, &cfg, &batch, &lw, 1e-5, 300, 23).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn untrained_head_is_near_chance() {
    let cfg = tiny_config(2, 64, 4, 5, 4);
    let r = train_toy(&CopyTask::default(), &cfg, &TrainOptions { steps: 0, seed: 4, ..TrainOptions::default() }).unwrap();
    assert!((r.mean_accuracy - 1.0 / 3.0).abs() < 0.1, "{}", r.mean_accuracy);
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = tiny_config(1, 32, 2, 2, 3);
    let opts = TrainOptions { steps: 15, seed: 9, ..TrainOptions::default() };
    let a = train_toy(&CopyTask::default(), &cfg, &opts).unwrap();
    let b = train_toy(&CopyTask::default(), &cfg, &opts).unwrap();
    assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    assert_eq!(a.params, b.params);
    let c = train_toy(&CopyTask::default(), &cfg, &TrainOptions { seed: 10, ..opts }).unwrap();
    assert_ne!(a.final_loss.to_bits(), c.final_loss.to_bits());
}
