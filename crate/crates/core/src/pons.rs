//! Context compiler: turns multi-layer backbone features into a fixed set of
//! `Nc` context tokens.
//!
//! Each layer is projected to `d_model`, gated with a GLU, stacked, and then
//! summarized by single-head attention pooling with learned queries:
//! `A = softmax(Q (G W_k)ᵀ / √d_model)`, `C = LN(A · G W_v)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{layer_norm_row, sigmoid, softmax_in_place, Matrix};

const LN_EPS: f64 = 1e-5;

/// Which backbone depth a feature block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerId {
    Early,
    Mid,
    Late,
}

impl LayerId {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerId::Early => "early",
            LayerId::Mid => "mid",
            LayerId::Late => "late",
        }
    }
}

/// Hidden states of one backbone layer, `T × d_layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatures {
    pub layer: LayerId,
    pub tokens: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer: LayerId,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PonsConfig {
    pub d_model: usize,
    pub n_context: usize,
    pub layers: Vec<LayerSpec>,
    /// Reserved for a cross-layer attention fusion stage; must stay `false`.
    #[serde(default)]
    pub cross_layer_attention: bool,
}

impl Default for PonsConfig {
    fn default() -> Self {
        Self {
            d_model: 1024,
            n_context: 24,
            layers: [LayerId::Early, LayerId::Mid, LayerId::Late]
                .into_iter()
                .map(|layer| LayerSpec { layer, dim: 1024 })
                .collect(),
            cross_layer_attention: false,
        }
    }
}

impl PonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_context == 0 {
            return Err(invalid("d_model and n_context must be positive"));
        }
        if self.layers.is_empty() {
            return Err(invalid("at least one backbone layer is required"));
        }
        if self.layers.iter().any(|l| l.dim == 0) {
            return Err(invalid("layer widths must be positive"));
        }
        if self.cross_layer_attention {
            return Err(invalid("cross-layer attention fusion is not implemented"));
        }
        Ok(())
    }
}

/// Projection and GLU gate for one backbone layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjection {
    pub layer: LayerId,
    /// `d_layer × d_model`
    pub w: Matrix,
    pub b: Matrix,
    /// `d_model × d_model`
    pub gate_w: Matrix,
    pub gate_b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PonsParams {
    pub layers: Vec<LayerProjection>,
    /// `Nc × d_model` pooling queries.
    pub queries: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub ln_gamma: Matrix,
    pub ln_beta: Matrix,
}

impl PonsParams {
    pub fn zeros(cfg: &PonsConfig) -> Self {
        let d = cfg.d_model;
        Self {
            layers: cfg
                .layers
                .iter()
                .map(|l| LayerProjection {
                    layer: l.layer,
                    w: Matrix::zeros(l.dim, d),
                    b: Matrix::zeros(1, d),
                    gate_w: Matrix::zeros(d, d),
                    gate_b: Matrix::zeros(1, d),
                })
                .collect(),
            queries: Matrix::zeros(cfg.n_context, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            ln_gamma: Matrix::filled(1, d, 1.0),
            ln_beta: Matrix::zeros(1, d),
        }
    }

    pub fn init<R: Rng>(cfg: &PonsConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let d = cfg.d_model as f64;
        let mut fill = |m: &mut Matrix, sd: f64| {
            let n = Normal::new(0.0, sd).expect("positive sd");
            m.as_mut_slice().iter_mut().for_each(|v| *v = n.sample(rng));
        };
        for l in &mut p.layers {
            let fan_in = l.w.rows() as f64;
            fill(&mut l.w, 1.0 / fan_in.sqrt());
            fill(&mut l.gate_w, 1.0 / d.sqrt());
        }
        fill(&mut p.queries, 1.0);
        fill(&mut p.w_k, 1.0 / d.sqrt());
        fill(&mut p.w_v, 1.0 / d.sqrt());
        Ok(p)
    }

    pub fn d_model(&self) -> usize {
        self.queries.cols()
    }

    pub fn n_context(&self) -> usize {
        self.queries.rows()
    }

    /// Tensors keyed by stable names, for archive storage.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for l in &self.layers {
            let n = l.layer.as_str();
            out.push((format!("pons.{n}.w"), &l.w));
            out.push((format!("pons.{n}.b"), &l.b));
            out.push((format!("pons.{n}.gate_w"), &l.gate_w));
            out.push((format!("pons.{n}.gate_b"), &l.gate_b));
        }
        out.push(("pons.queries".into(), &self.queries));
        out.push(("pons.w_k".into(), &self.w_k));
        out.push(("pons.w_v".into(), &self.w_v));
        out.push(("pons.ln_gamma".into(), &self.ln_gamma));
        out.push(("pons.ln_beta".into(), &self.ln_beta));
        out
    }

    pub fn from_named(cfg: &PonsConfig, mut lookup: impl FnMut(&str) -> Option<Matrix>) -> Result<Self> {
        let template = Self::zeros(cfg);
        let mut loaded = Vec::new();
        for (name, m) in template.named_tensors() {
            let t = lookup(&name).ok_or_else(|| invalid(format!("missing adapter tensor `{name}`")))?;
            if t.shape() != m.shape() {
                return Err(invalid(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), m.shape())));
            }
            loaded.push(t);
        }
        let mut it = loaded.into_iter();
        let mut next = || it.next().expect("one tensor per name");
        let layers = cfg
            .layers
            .iter()
            .map(|l| LayerProjection { layer: l.layer, w: next(), b: next(), gate_w: next(), gate_b: next() })
            .collect();
        Ok(Self { layers, queries: next(), w_k: next(), w_v: next(), ln_gamma: next(), ln_beta: next() })
    }

    fn projection(&self, layer: LayerId) -> Result<&LayerProjection> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .ok_or_else(|| invalid(format!("no projection configured for the {} layer", layer.as_str())))
    }
}

/// Fixed-length context handed to the action head, `Nc × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTokens(pub Matrix);

impl ContextTokens {
    pub fn tokens(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// `H W_l + b_l` for the layer's own projection.
pub fn project_layer(h: &LayerFeatures, params: &PonsParams) -> Result<Matrix> {
    let proj = params.projection(h.layer)?;
    if h.tokens.cols() != proj.w.rows() {
        return Err(invalid(format!(
            "{} layer features are {} wide, projection expects {}",
            h.layer.as_str(),
            h.tokens.cols(),
            proj.w.rows()
        )));
    }
    if h.tokens.rows() == 0 {
        return Err(invalid(format!("{} layer has no tokens", h.layer.as_str())));
    }
    let mut out = h.tokens.matmul(&proj.w)?;
    out.add_row_vector(proj.b.as_slice());
    Ok(out)
}

/// GLU-gates each projected layer (`x ⊙ σ(x W_g + b_g)`) with the gate of
/// the matching entry in `params.layers`, then stacks them row-wise.
pub fn fuse_layers(projected: &[Matrix], params: &PonsParams) -> Result<Matrix> {
    if projected.is_empty() {
        return Err(invalid("no projected layers to fuse"));
    }
    if projected.len() != params.layers.len() {
        return Err(invalid(format!(
            "{} projected layers for {} configured projections",
            projected.len(),
            params.layers.len()
        )));
    }
    let d = params.d_model();
    let mut gated = Vec::with_capacity(projected.len());
    for (x, proj) in projected.iter().zip(&params.layers) {
        if x.cols() != d {
            return Err(invalid(format!("projected layer is {} wide, expected {d}", x.cols())));
        }
        let mut gate = x.matmul(&proj.gate_w)?;
        gate.add_row_vector(proj.gate_b.as_slice());
        let mut y = x.clone();
        for (v, g) in y.as_mut_slice().iter_mut().zip(gate.as_slice()) {
            *v *= sigmoid(*g);
        }
        gated.push(y);
    }
    Matrix::vstack(&gated.iter().collect::<Vec<_>>())
}

/// Pools `g` (`T × d_model`) into `Nc` tokens, returning them together with
/// the `Nc × T` attention matrix.
pub fn attention_pool_with_weights(g: &Matrix, params: &PonsParams) -> Result<(ContextTokens, Matrix)> {
    let d = params.d_model();
    if g.rows() == 0 {
        return Err(invalid("cannot pool an empty token set"));
    }
    if g.cols() != d {
        return Err(invalid(format!("fused tokens are {} wide, expected {d}", g.cols())));
    }
    let keys = g.matmul(&params.w_k)?;
    let values = g.matmul(&params.w_v)?;
    let mut attn = params.queries.matmul(&keys.transpose())?;
    attn.scale(1.0 / (d as f64).sqrt());
    for r in 0..attn.rows() {
        softmax_in_place(attn.row_mut(r));
    }
    let pooled = attn.matmul(&values)?;
    let mut out = Matrix::zeros(pooled.rows(), d);
    let mut xhat = vec![0.0; d];
    for r in 0..pooled.rows() {
        let mut row = vec![0.0; d];
        layer_norm_row(pooled.row(r), params.ln_gamma.as_slice(), params.ln_beta.as_slice(), LN_EPS, &mut row, &mut xhat);
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok((ContextTokens(out), attn))
}

pub fn attention_pool(g: &Matrix, params: &PonsParams) -> Result<ContextTokens> {
    Ok(attention_pool_with_weights(g, params)?.0)
}

/// Full adapter pass over one set of layer features. Features are matched
/// to projections by layer id; every configured layer must be present.
pub fn compile_context(features: &[LayerFeatures], params: &PonsParams) -> Result<ContextTokens> {
    let mut projected = Vec::with_capacity(params.layers.len());
    for proj in &params.layers {
        let h = features
            .iter()
            .find(|f| f.layer == proj.layer)
            .ok_or_else(|| invalid(format!("missing features for the {} layer", proj.layer.as_str())))?;
        projected.push(project_layer(h, params)?);
    }
    let g = fuse_layers(&projected, params)?;
    attention_pool(&g, params)
}
