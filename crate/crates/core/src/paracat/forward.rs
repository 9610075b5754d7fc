use super::params::{BlockParams, HeadParams, Modality};
use super::{ActionChunk, HeadConfig, TokenBundle};
use crate::error::{Error, Result};
use crate::numerics::{gemm, layer_norm_row, softmax_in_place, Matrix, View, ViewMut};

pub(crate) const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Counters describing one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardStats {
    pub block_evals: usize,
    pub sequence_len: usize,
}

pub(crate) struct LnCache {
    pub xhat: Matrix,
    pub rstd: Vec<f64>,
}

pub(crate) struct BlockCache {
    pub ln1: LnCache,
    pub h1: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Attention probabilities, one `S × S` matrix per head.
    pub attn: Vec<Matrix>,
    pub o: Matrix,
    pub ln2: LnCache,
    pub h2: Matrix,
    pub u: Matrix,
    pub m: Matrix,
}

/// Activations retained for the backward pass.
pub struct ForwardCache {
    pub(crate) ctx_rows: usize,
    pub(crate) img_rows: usize,
    pub(crate) txt_rows: usize,
    pub(crate) query_start: usize,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) final_ln: LnCache,
    pub(crate) z: Matrix,
}

/// Runs the head and returns the `K × D` chunk with `tau = 1` probabilities.
pub fn forward(bundle: &TokenBundle, params: &HeadParams, cfg: &HeadConfig) -> Result<ActionChunk> {
    Ok(run(bundle, params, cfg, false)?.0)
}

pub fn forward_with_stats(
    bundle: &TokenBundle,
    params: &HeadParams,
    cfg: &HeadConfig,
) -> Result<(ActionChunk, ForwardStats)> {
    let (chunk, _, stats) = run(bundle, params, cfg, false)?;
    Ok((chunk, stats))
}

pub fn forward_with_cache(
    bundle: &TokenBundle,
    params: &HeadParams,
    cfg: &HeadConfig,
) -> Result<(ActionChunk, ForwardCache)> {
    let (chunk, cache, _) = run(bundle, params, cfg, true)?;
    Ok((chunk, cache.expect("cache requested")))
}

fn run(
    bundle: &TokenBundle,
    params: &HeadParams,
    cfg: &HeadConfig,
    keep: bool,
) -> Result<(ActionChunk, Option<ForwardCache>, ForwardStats)> {
    cfg.validate()?;
    bundle.check(cfg)?;
    params.check(cfg)?;

    let mut x = embed(bundle, params, cfg);
    let seq = x.rows();
    let nq = cfg.num_queries();
    let query_start = seq - nq;

    let mut caches = Vec::with_capacity(if keep { cfg.depth } else { 0 });
    let mut block_evals = 0;
    for b in &params.blocks {
        let c = block_forward(&mut x, b, cfg);
        block_evals += 1;
        if keep {
            caches.push(c);
        }
    }

    let xq = x.slice_rows(query_start, nq);
    let (z, final_ln) = ln_forward(&xq, &params.final_gamma, &params.final_beta);
    let mut out = Matrix::zeros(nq, 3);
    gemm(1.0, View::of(&z), View::of(&params.w_out).t(), 0.0, ViewMut::of(&mut out));
    out.add_row_vector(params.b_out.as_slice());

    if !out.is_finite() {
        return Err(Error::NumericalFailure("head produced non-finite logits".into()));
    }
    let logits = (0..nq).map(|r| [out.get(r, 0), out.get(r, 1), out.get(r, 2)]).collect();
    let chunk = ActionChunk::from_logits(cfg.k_chunk, cfg.d_act, logits)?;
    let stats = ForwardStats { block_evals, sequence_len: seq };
    let cache = keep.then(|| ForwardCache {
        ctx_rows: bundle.context.rows(),
        img_rows: bundle.image.rows(),
        txt_rows: bundle.text.rows(),
        query_start,
        blocks: caches,
        final_ln,
        z,
    });
    Ok((chunk, cache, stats))
}

fn embed(bundle: &TokenBundle, params: &HeadParams, cfg: &HeadConfig) -> Matrix {
    let d = cfg.d_model;
    let seq = bundle.sequence_len(cfg);
    let mut x = Matrix::zeros(seq, d);
    let tag = |m: Modality| params.modality_tags.row(m as usize);
    let mut r = 0;
    let mut put = |x: &mut Matrix, parts: &[&[f64]]| {
        let row = x.row_mut(r);
        for p in parts {
            for (a, b) in row.iter_mut().zip(p.iter()) {
                *a += b;
            }
        }
        r += 1;
    };
    for i in 0..bundle.context.rows() {
        put(&mut x, &[bundle.context.row(i), tag(Modality::Brain)]);
    }
    for i in 0..bundle.image.rows() {
        put(&mut x, &[bundle.image.row(i), tag(Modality::Image), params.image_positions.row(i)]);
    }
    for i in 0..bundle.text.rows() {
        put(&mut x, &[bundle.text.row(i), tag(Modality::Text), params.text_positions.row(i)]);
    }
    put(&mut x, &[bundle.state.row(0), tag(Modality::State)]);
    for i in 0..cfg.num_queries() {
        put(&mut x, &[params.action_queries.row(i), tag(Modality::Action)]);
    }
    x
}

pub(crate) fn ln_forward(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> (Matrix, LnCache) {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut o = vec![0.0; cols];
        let mut h = vec![0.0; cols];
        rstd.push(layer_norm_row(x.row(r), gamma.as_slice(), beta.as_slice(), LN_EPS, &mut o, &mut h));
        out.row_mut(r).copy_from_slice(&o);
        xhat.row_mut(r).copy_from_slice(&h);
    }
    (out, LnCache { xhat, rstd })
}

fn linear(input: &Matrix, w: &Matrix, bias: Option<&Matrix>) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), w.cols());
    gemm(1.0, View::of(input), View::of(w), 0.0, ViewMut::of(&mut out));
    if let Some(b) = bias {
        out.add_row_vector(b.as_slice());
    }
    out
}

fn block_forward(x: &mut Matrix, b: &BlockParams, cfg: &HeadConfig) -> BlockCache {
    let seq = x.rows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (h1, ln1) = ln_forward(x, &b.ln1_gamma, &b.ln1_beta);
    let q = linear(&h1, &b.wq, Some(&b.bq));
    let k = linear(&h1, &b.wk, None);
    let v = linear(&h1, &b.wv, Some(&b.bv));

    let mut o = Matrix::zeros(seq, cfg.d_model);
    let mut attn = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = View::of(&q).col_block(h * dh, dh);
        let kh = View::of(&k).col_block(h * dh, dh);
        let vh = View::of(&v).col_block(h * dh, dh);
        let mut scores = Matrix::zeros(seq, seq);
        gemm(scale, qh, kh.t(), 0.0, ViewMut::of(&mut scores));
        for r in 0..seq {
            softmax_in_place(scores.row_mut(r));
        }
        gemm(1.0, View::of(&scores), vh, 0.0, ViewMut::of(&mut o).col_block(h * dh, dh));
        attn.push(scores);
    }
    let a = linear(&o, &b.wo, Some(&b.bo));
    x.axpy(1.0, &a);

    let (h2, ln2) = ln_forward(x, &b.ln2_gamma, &b.ln2_beta);
    let u = linear(&h2, &b.w1, Some(&b.b1));
    let mut m = u.clone();
    m.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
    let f = linear(&m, &b.w2, Some(&b.b2));
    x.axpy(1.0, &f);

    BlockCache { ln1, h1, q, k, v, attn, o, ln2, h2, u, m }
}
