use super::forward::{gelu_grad, BlockCache, ForwardCache, LnCache};
use super::params::{BlockParams, HeadParams, Modality};
use super::HeadConfig;
use crate::numerics::{gemm, layer_norm_row_backward, Matrix, View, ViewMut};

/// Gradients with respect to the input token blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrads {
    pub context: Matrix,
    pub image: Matrix,
    pub text: Matrix,
    pub state: Matrix,
}

/// Reverse-mode pass from `dL/dlogits` (row-major over `(k, j)`) back to every
/// parameter and input token.
pub fn backward(
    params: &HeadParams,
    cfg: &HeadConfig,
    cache: &ForwardCache,
    dlogits: &[[f64; 3]],
) -> (HeadParams, TokenGrads) {
    let d = cfg.d_model;
    let nq = cfg.num_queries();
    assert_eq!(dlogits.len(), nq, "one logit gradient per action query");
    let mut g = params.zeros_like();

    let dl = Matrix::from_fn(nq, 3, |r, c| dlogits[r][c]);
    add_colsum(&mut g.b_out, &dl);
    gemm(1.0, View::of(&dl).t(), View::of(&cache.z), 1.0, ViewMut::of(&mut g.w_out));
    let mut dz = Matrix::zeros(nq, d);
    gemm(1.0, View::of(&dl), View::of(&params.w_out), 0.0, ViewMut::of(&mut dz));

    let seq = cache.query_start + nq;
    let mut dx = Matrix::zeros(seq, d);
    {
        let mut dq = Matrix::zeros(nq, d);
        ln_backward(&dz, &cache.final_ln, &params.final_gamma, &mut g.final_gamma, &mut g.final_beta, &mut dq);
        for r in 0..nq {
            dx.row_mut(cache.query_start + r).copy_from_slice(dq.row(r));
        }
    }

    for ((b, c), gb) in params.blocks.iter().zip(&cache.blocks).zip(g.blocks.iter_mut()).rev() {
        block_backward(&mut dx, b, c, gb, cfg);
    }

    // Embedding: every row received its input token plus tag (and position).
    let mut r = 0;
    let mut take = |n: usize| {
        let m = dx.slice_rows(r, n);
        r += n;
        m
    };
    let context = take(cache.ctx_rows);
    let image = take(cache.img_rows);
    let text = take(cache.txt_rows);
    let state = take(1);
    let queries = take(nq);

    let tag_add = |tags: &mut Matrix, m: Modality, src: &Matrix| {
        let row = tags.row_mut(m as usize);
        for i in 0..src.rows() {
            for (a, b) in row.iter_mut().zip(src.row(i)) {
                *a += b;
            }
        }
    };
    tag_add(&mut g.modality_tags, Modality::Brain, &context);
    tag_add(&mut g.modality_tags, Modality::Image, &image);
    tag_add(&mut g.modality_tags, Modality::Text, &text);
    tag_add(&mut g.modality_tags, Modality::State, &state);
    tag_add(&mut g.modality_tags, Modality::Action, &queries);
    for i in 0..image.rows() {
        g.image_positions.row_mut(i).copy_from_slice(image.row(i));
    }
    for i in 0..text.rows() {
        g.text_positions.row_mut(i).copy_from_slice(text.row(i));
    }
    g.action_queries = queries;

    (g, TokenGrads { context, image, text, state })
}

fn add_colsum(dst: &mut Matrix, src: &Matrix) {
    let acc = dst.as_mut_slice();
    for r in 0..src.rows() {
        for (a, v) in acc.iter_mut().zip(src.row(r)) {
            *a += v;
        }
    }
}

fn ln_backward(
    dy: &Matrix,
    cache: &LnCache,
    gamma: &Matrix,
    dgamma: &mut Matrix,
    dbeta: &mut Matrix,
    dx: &mut Matrix,
) {
    for r in 0..dy.rows() {
        layer_norm_row_backward(
            dy.row(r),
            cache.xhat.row(r),
            cache.rstd[r],
            gamma.as_slice(),
            dgamma.as_mut_slice(),
            dbeta.as_mut_slice(),
            dx.row_mut(r),
        );
    }
}

/// On entry `dx` holds the gradient at the block output; on exit, at its input.
fn block_backward(dx: &mut Matrix, b: &BlockParams, c: &BlockCache, g: &mut BlockParams, cfg: &HeadConfig) {
    let seq = dx.rows();
    let d = cfg.d_model;
    let hidden = cfg.hidden_dim();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // MLP branch: x3 = x2 + gelu(LN2(x2) W1 + b1) W2 + b2
    add_colsum(&mut g.b2, dx);
    gemm(1.0, View::of(&c.m).t(), View::of(dx), 1.0, ViewMut::of(&mut g.w2));
    let mut du = Matrix::zeros(seq, hidden);
    gemm(1.0, View::of(dx), View::of(&b.w2).t(), 0.0, ViewMut::of(&mut du));
    for (dv, uv) in du.as_mut_slice().iter_mut().zip(c.u.as_slice()) {
        *dv *= gelu_grad(*uv);
    }
    add_colsum(&mut g.b1, &du);
    gemm(1.0, View::of(&c.h2).t(), View::of(&du), 1.0, ViewMut::of(&mut g.w1));
    let mut dh2 = Matrix::zeros(seq, d);
    gemm(1.0, View::of(&du), View::of(&b.w1).t(), 0.0, ViewMut::of(&mut dh2));
    ln_backward(&dh2, &c.ln2, &b.ln2_gamma, &mut g.ln2_gamma, &mut g.ln2_beta, dx);

    // Attention branch: x2 = x + Attn(LN1(x)) Wo + bo
    add_colsum(&mut g.bo, dx);
    gemm(1.0, View::of(&c.o).t(), View::of(dx), 1.0, ViewMut::of(&mut g.wo));
    let mut d_o = Matrix::zeros(seq, d);
    gemm(1.0, View::of(dx), View::of(&b.wo).t(), 0.0, ViewMut::of(&mut d_o));

    let mut dq = Matrix::zeros(seq, d);
    let mut dk = Matrix::zeros(seq, d);
    let mut dv = Matrix::zeros(seq, d);
    let mut dp = Matrix::zeros(seq, seq);
    for h in 0..cfg.heads {
        let p = &c.attn[h];
        let doh = View::of(&d_o).col_block(h * dh, dh);
        let qh = View::of(&c.q).col_block(h * dh, dh);
        let kh = View::of(&c.k).col_block(h * dh, dh);
        let vh = View::of(&c.v).col_block(h * dh, dh);
        gemm(1.0, doh, vh.t(), 0.0, ViewMut::of(&mut dp));
        gemm(1.0, View::of(p).t(), doh, 0.0, ViewMut::of(&mut dv).col_block(h * dh, dh));
        // softmax backward, folded with the score scale
        for r in 0..seq {
            let pr = p.row(r);
            let row = dp.row_mut(r);
            let dot: f64 = pr.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            for (x, pv) in row.iter_mut().zip(pr) {
                *x = pv * (*x - dot) * scale;
            }
        }
        gemm(1.0, View::of(&dp), kh, 0.0, ViewMut::of(&mut dq).col_block(h * dh, dh));
        gemm(1.0, View::of(&dp).t(), qh, 0.0, ViewMut::of(&mut dk).col_block(h * dh, dh));
    }
    add_colsum(&mut g.bq, &dq);
    add_colsum(&mut g.bv, &dv);
    gemm(1.0, View::of(&c.h1).t(), View::of(&dq), 1.0, ViewMut::of(&mut g.wq));
    gemm(1.0, View::of(&c.h1).t(), View::of(&dk), 1.0, ViewMut::of(&mut g.wk));
    gemm(1.0, View::of(&c.h1).t(), View::of(&dv), 1.0, ViewMut::of(&mut g.wv));
    let mut dh1 = Matrix::zeros(seq, d);
    gemm(1.0, View::of(&dq), View::of(&b.wq).t(), 0.0, ViewMut::of(&mut dh1));
    gemm(1.0, View::of(&dk), View::of(&b.wk).t(), 1.0, ViewMut::of(&mut dh1));
    gemm(1.0, View::of(&dv), View::of(&b.wv).t(), 1.0, ViewMut::of(&mut dh1));
    ln_backward(&dh1, &c.ln1, &b.ln1_gamma, &mut g.ln1_gamma, &mut g.ln1_beta, dx);
}
