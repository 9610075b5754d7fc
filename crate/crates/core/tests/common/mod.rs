#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripart_core::paracat::{HeadConfig, HeadParams, TokenBundle};
use tripart_core::Matrix;

pub fn tiny_config(depth: usize, d_model: usize, heads: usize, k: usize, d: usize) -> HeadConfig {
    HeadConfig {
        depth,
        d_model,
        heads,
        k_chunk: k,
        d_act: d,
        mlp_ratio: 4.0,
        max_image_tokens: 32,
        max_text_tokens: 16,
        relative_positions: false,
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_bundle(cfg: &HeadConfig, nc: usize, img: usize, txt: usize, seed: u64) -> TokenBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    TokenBundle {
        context: random_matrix(&mut rng, nc, d),
        image: random_matrix(&mut rng, img, d),
        text: random_matrix(&mut rng, txt, d),
        state: random_matrix(&mut rng, 1, d),
    }
}

/// Params with every tensor perturbed so no term is trivially zero.
pub fn random_params(cfg: &HeadConfig, seed: u64) -> HeadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = HeadParams::init(cfg, &mut rng).unwrap();
    for (_, m) in p.tensors_mut() {
        for v in m.as_mut_slice() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    p
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn affine(x: &Rows, w: &Matrix, b: Option<&Matrix>) -> Rows {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| {
                    let mut s = b.map_or(0.0, |b| b.get(0, j));
                    for (i, xi) in row.iter().enumerate() {
                        s += xi * w.get(i, j);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn norm(x: &Rows, g: &Matrix, b: &Matrix) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g.get(0, i) + b.get(0, i)).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Loop-only transformer forward returning `K·D` logit triples.
pub fn oracle_logits(bundle: &TokenBundle, p: &HeadParams, cfg: &HeadConfig) -> Vec<[f64; 3]> {
    let d = cfg.d_model;
    let tag = |i: usize| p.modality_tags.row(i).to_vec();
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    let mut x: Rows = Vec::new();
    for r in 0..bundle.context.rows() {
        x.push(add(bundle.context.row(r), &tag(0)));
    }
    for r in 0..bundle.image.rows() {
        x.push(add(&add(bundle.image.row(r), &tag(1)), p.image_positions.row(r)));
    }
    for r in 0..bundle.text.rows() {
        x.push(add(&add(bundle.text.row(r), &tag(2)), p.text_positions.row(r)));
    }
    x.push(add(bundle.state.row(0), &tag(3)));
    for r in 0..cfg.num_queries() {
        x.push(add(p.action_queries.row(r), &tag(4)));
    }
    let s = x.len();
    let dh = d / cfg.heads;

    for b in &p.blocks {
        let h = norm(&x, &b.ln1_gamma, &b.ln1_beta);
        let q = affine(&h, &b.wq, Some(&b.bq));
        let k = affine(&h, &b.wk, None);
        let v = affine(&h, &b.wv, Some(&b.bv));
        let mut o = vec![vec![0.0; d]; s];
        for head in 0..cfg.heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..s {
                let scores: Vec<f64> = (0..s)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|z| (z - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    o[i][c] = (0..s).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        let a = affine(&o, &b.wo, Some(&b.bo));
        for i in 0..s {
            for c in 0..d {
                x[i][c] += a[i][c];
            }
        }
        let h2 = norm(&x, &b.ln2_gamma, &b.ln2_beta);
        let u: Rows = affine(&h2, &b.w1, Some(&b.b1)).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        let f = affine(&u, &b.w2, Some(&b.b2));
        for i in 0..s {
            for c in 0..d {
                x[i][c] += f[i][c];
            }
        }
    }
    let queries: Rows = x[s - cfg.num_queries()..].to_vec();
    let z = norm(&queries, &p.final_gamma, &p.final_beta);
    z.iter()
        .map(|row| {
            std::array::from_fn(|c| p.b_out.get(0, c) + row.iter().enumerate().map(|(i, v)| v * p.w_out.get(c, i)).sum::<f64>())
        })
        .collect()
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    rows(m)
}
