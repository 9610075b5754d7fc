use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::HeadConfig;
use crate::error::{invalid, Result};
use crate::numerics::Matrix;

/// Modality tags added to every token of the corresponding block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Brain = 0,
    Image = 1,
    Text = 2,
    State = 3,
    Action = 4,
}

/// Weights of one pre-LN transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    pub wq: Matrix,
    pub bq: Matrix,
    // Keys carry no bias: softmax is invariant to a per-row shift.
    pub wk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl BlockParams {
    fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            ln1_gamma: Matrix::filled(1, d, 1.0),
            ln1_beta: Matrix::zeros(1, d),
            wq: Matrix::zeros(d, d),
            bq: Matrix::zeros(1, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            bv: Matrix::zeros(1, d),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln2_gamma: Matrix::filled(1, d, 1.0),
            ln2_beta: Matrix::zeros(1, d),
            w1: Matrix::zeros(d, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, d),
            b2: Matrix::zeros(1, d),
        }
    }

    fn fields(&self) -> [(&'static str, &Matrix); 15] {
        [
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Matrix); 15] {
        [
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_gamma", &mut self.ln2_gamma),
            ("ln2_beta", &mut self.ln2_beta),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// All learnable state of the head. The same struct doubles as the
/// gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `(K·D) × d_model`, row `k·D + j` is query `(k, j)`.
    pub action_queries: Matrix,
    /// `5 × d_model`, indexed by [`Modality`].
    pub modality_tags: Matrix,
    pub image_positions: Matrix,
    pub text_positions: Matrix,
    pub blocks: Vec<BlockParams>,
    pub final_gamma: Matrix,
    pub final_beta: Matrix,
    /// `3 × d_model` shared output projection.
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl HeadParams {
    /// Every weight zero, layer-norm gains one.
    pub fn zeros(cfg: &HeadConfig) -> Self {
        let d = cfg.d_model;
        Self {
            action_queries: Matrix::zeros(cfg.num_queries(), d),
            modality_tags: Matrix::zeros(5, d),
            image_positions: Matrix::zeros(cfg.max_image_tokens, d),
            text_positions: Matrix::zeros(cfg.max_text_tokens, d),
            blocks: (0..cfg.depth).map(|_| BlockParams::zeros(d, cfg.hidden_dim())).collect(),
            final_gamma: Matrix::filled(1, d, 1.0),
            final_beta: Matrix::zeros(1, d),
            w_out: Matrix::zeros(3, d),
            b_out: Matrix::zeros(1, 3),
        }
    }

    /// Random initialization: fan-in scaled weights, unit-variance queries,
    /// small tags and positions, residual projections shrunk by `1/√(2L)`.
    pub fn init<R: Rng>(cfg: &HeadConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let hidden = cfg.hidden_dim();
        let mut p = Self::zeros(cfg);
        let residual = 1.0 / (2.0 * cfg.depth as f64).sqrt();
        fill_normal(&mut p.action_queries, 1.0, rng);
        fill_normal(&mut p.modality_tags, 0.1, rng);
        fill_normal(&mut p.image_positions, 0.1, rng);
        fill_normal(&mut p.text_positions, 0.1, rng);
        let sd = 1.0 / (d as f64).sqrt();
        for b in &mut p.blocks {
            fill_normal(&mut b.wq, sd, rng);
            fill_normal(&mut b.wk, sd, rng);
            fill_normal(&mut b.wv, sd, rng);
            fill_normal(&mut b.wo, sd * residual, rng);
            fill_normal(&mut b.w1, sd, rng);
            fill_normal(&mut b.w2, residual / (hidden as f64).sqrt(), rng);
        }
        fill_normal(&mut p.w_out, sd, rng);
        Ok(p)
    }

    /// Zero tensor of identical layout, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.tensors_mut() {
            m.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("action_queries".into(), &self.action_queries),
            ("modality_tags".into(), &self.modality_tags),
            ("image_positions".into(), &self.image_positions),
            ("text_positions".into(), &self.text_positions),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.fields().into_iter().map(|(n, m)| (format!("block{i}.{n}"), m)));
        }
        out.push(("final_gamma".into(), &self.final_gamma));
        out.push(("final_beta".into(), &self.final_beta));
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = vec![
            ("action_queries".into(), &mut self.action_queries),
            ("modality_tags".into(), &mut self.modality_tags),
            ("image_positions".into(), &mut self.image_positions),
            ("text_positions".into(), &mut self.text_positions),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.fields_mut().into_iter().map(|(n, m)| (format!("block{i}.{n}"), m)));
        }
        out.push(("final_gamma".into(), &mut self.final_gamma));
        out.push(("final_beta".into(), &mut self.final_beta));
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), &mut self.b_out));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn check(&self, cfg: &HeadConfig) -> Result<()> {
        let expected = HeadParams::zeros(cfg);
        let mine = self.tensors();
        let theirs = expected.tensors();
        if mine.len() != theirs.len() {
            return Err(invalid(format!(
                "parameter set has {} tensors, config implies {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name, m), (_, e)) in mine.iter().zip(&theirs) {
            if m.shape() != e.shape() {
                return Err(invalid(format!(
                    "{name} has shape {:?}, config implies {:?}",
                    m.shape(),
                    e.shape()
                )));
            }
        }
        Ok(())
    }

    /// Loads tensors by name, e.g. from a feature-cache archive.
    pub fn from_named(cfg: &HeadConfig, mut lookup: impl FnMut(&str) -> Option<Matrix>) -> Result<Self> {
        let mut p = HeadParams::zeros(cfg);
        for (name, slot) in p.tensors_mut() {
            let m = lookup(&name).ok_or_else(|| invalid(format!("missing head tensor `{name}`")))?;
            if m.shape() != slot.shape() {
                return Err(invalid(format!(
                    "head tensor `{name}` has shape {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        Ok(p)
    }
}

fn fill_normal<R: Rng>(m: &mut Matrix, sd: f64, rng: &mut R) {
    let dist = Normal::new(0.0, sd).expect("positive standard deviation");
    for v in m.as_mut_slice() {
        *v = dist.sample(rng);
    }
}
