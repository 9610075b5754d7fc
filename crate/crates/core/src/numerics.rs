//! Dense matrices and the probability kernels shared by the math modules.
//!
//! Everything is `f64`. Matrix products go through `matrixmultiply`'s
//! strided GEMM so transposed operands and per-head column blocks never
//! need to be copied.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Floor applied to reference probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance used when checking that a probability vector sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix data length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(invalid(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// A `1 × n` matrix holding `v`.
    pub fn row_vector(v: &[f64]) -> Self {
        Self { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, View::of(self), View::of(other), 0.0, ViewMut::of(&mut out));
        Ok(out)
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols, "bias width mismatch");
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Stacks matrices vertically. All inputs must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, m) in parts.iter().enumerate() {
            if m.cols != cols {
                return Err(invalid(format!("part {i} has {} columns, expected {cols}", m.cols)));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Matrix {
        Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }
}

/// Read-only strided view used to feed GEMM without copying.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    off: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    pub(crate) fn of(m: &'a Matrix) -> Self {
        Self { data: &m.data, off: 0, rows: m.rows, cols: m.cols, rs: m.cols, cs: 1 }
    }

    pub(crate) fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Columns `start..start + len` of the view.
    pub(crate) fn col_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        Self { off: self.off + start * self.cs, cols: len, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

pub(crate) struct ViewMut<'a> {
    data: &'a mut [f64],
    off: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> ViewMut<'a> {
    pub(crate) fn of(m: &'a mut Matrix) -> Self {
        let (rows, cols) = (m.rows, m.cols);
        Self { data: &mut m.data, off: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub(crate) fn col_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        Self { off: self.off + start * self.cs, cols: len, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

/// `c = alpha * a · b + beta * c` on strided views.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape mismatch");
    a.check();
    b.check();
    c.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for col in 0..n {
                let idx = c.off + r * c.rs + col * c.cs;
                c.data[idx] = if beta == 0.0 { 0.0 } else { beta * c.data[idx] };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above for their full
    // extent, and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Probabilities of the `(−1, 0, +1)` classes for one action cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbVector3 {
    pub p_minus: f64,
    pub p_zero: f64,
    pub p_plus: f64,
}

impl ProbVector3 {
    pub fn new(p_minus: f64, p_zero: f64, p_plus: f64) -> Result<Self> {
        let p = [p_minus, p_zero, p_plus];
        check_distribution(&p)?;
        Ok(Self { p_minus, p_zero, p_plus })
    }

    pub fn uniform() -> Self {
        Self { p_minus: 1.0 / 3.0, p_zero: 1.0 / 3.0, p_plus: 1.0 / 3.0 }
    }

    /// Tempered softmax over a logit triple.
    pub fn from_logits(logits: [f64; 3], tau: f64) -> Result<Self> {
        let p = softmax_temp(&logits, tau)?;
        Ok(Self { p_minus: p[0], p_zero: p[1], p_plus: p[2] })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p_minus, self.p_zero, self.p_plus]
    }

    /// Natural-log probabilities with [`PROB_FLOOR`] applied, usable as logits.
    pub fn log_probs(self) -> [f64; 3] {
        self.to_array().map(|p| p.max(PROB_FLOOR).ln())
    }

    /// Index of the most probable class (ties resolve toward the zero class,
    /// then toward −1).
    pub fn argmax(self) -> usize {
        let p = self.to_array();
        let mut best = 1;
        for i in [0, 2] {
            if p[i] > p[best] {
                best = i;
            }
        }
        best
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0 + NORMALIZATION_TOL) {
        return Err(invalid(format!("probabilities must lie in [0, 1], got {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(invalid(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Numerically stable `softmax(logits / tau)`.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(invalid(format!("temperature must be positive and finite, got {tau}")));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("logit {i} is not finite ({})", logits[i])));
    }
    if logits.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    let mut out: Vec<f64> = logits.iter().map(|x| x / tau).collect();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked in-place softmax for hot paths.
pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Layer normalization with population variance and `eps` inside the root.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != gamma.len() || x.len() != beta.len() {
        return Err(invalid(format!(
            "layer_norm length mismatch: x={}, gamma={}, beta={}",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("layer_norm eps must be positive, got {eps}")));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    layer_norm_row(x, gamma, beta, eps, &mut out, &mut xhat);
    Ok(out)
}

/// Normalizes one row into `out`, storing the standardized values in `xhat`.
/// Returns the reciprocal standard deviation for the backward pass.
pub(crate) fn layer_norm_row(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    out: &mut [f64],
    xhat: &mut [f64],
) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = gamma[i] * xhat[i] + beta[i];
    }
    rstd
}

/// Backward pass of [`layer_norm_row`]. Accumulates into `dgamma`, `dbeta`
/// and adds the input gradient into `dx`.
pub(crate) fn layer_norm_row_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: f64,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let n = dy.len() as f64;
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for i in 0..dy.len() {
        dgamma[i] += dy[i] * xhat[i];
        dbeta[i] += dy[i];
        let dxh = dy[i] * gamma[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[i];
    }
    mean_dxhat /= n;
    mean_dxhat_xhat /= n;
    for i in 0..dy.len() {
        let dxh = dy[i] * gamma[i];
        dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

/// Shannon entropy in nats; `0 · ln 0` counts as zero.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// `KL(p ‖ q)` in nats. `q` is a fixed target: it is floored at
/// [`PROB_FLOOR`] and never differentiated.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid(format!("kl_div length mismatch: {} vs {}", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum();
    // Rounding can leave a tiny negative residue when p == q.
    Ok(kl.max(0.0))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_temp(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_temp(&[0.0, 0.0, 2f64.ln()], 1.0).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        assert!((p[2] - 0.5).abs() < 1e-15);

        // exp(ln2 / 2) = sqrt 2; normalizer 2 + sqrt 2.
        let z = 2.0 + 2f64.sqrt();
        let p = softmax_temp(&[0.0, 0.0, 2f64.ln()], 2.0).unwrap();
        assert!((p[0] - 1.0 / z).abs() < 1e-12);
        assert!((p[2] - 2f64.sqrt() / z).abs() < 1e-12);
        assert!((p[0] - 0.2929).abs() < 1e-4 && (p[2] - 0.4142).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_temp(&[0.0, f64::NAN], 1.0).is_err());
        assert!(softmax_temp(&[0.0, 1.0], 0.0).is_err());
        assert!(softmax_temp(&[0.0, 1.0], -1.0).is_err());
        assert!(softmax_temp(&[], 1.0).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax_temp(&[1000.0, 999.0, -1000.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        let y = layer_norm(&[1.0, 1.0, 1.0], &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 0.0]);

        let y = layer_norm(&[-1.0, 1.0], &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);

        // Scalar oracle: mean 2, population variance 8/3.
        let eps = 1e-5;
        let y = layer_norm(&[0.0, 2.0, 4.0], &[2.0; 3], &[1.0; 3], eps).unwrap();
        let sd = (8.0f64 / 3.0 + eps).sqrt();
        let expect = [1.0 - 4.0 / sd, 1.0, 1.0 + 4.0 / sd];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[1.0 / 3.0; 3]).unwrap() - 3f64.ln()).abs() < 1e-12);
        let oracle = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        let h = entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 1.0397).abs() < 1e-4);
        assert!(entropy(&[0.5, 0.6, -0.1]).is_err());
        assert!(entropy(&[0.5, 0.4, 0.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_div(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        let v = kl_div(&[1.0, 0.0, 0.0], &[0.5, 0.25, 0.25]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let p: [f64; 3] = [0.6, 0.3, 0.1];
        let oracle: f64 = p.iter().map(|pi| pi * (pi / (1.0 / 3.0)).ln()).sum();
        let v = kl_div(&p, &[1.0 / 3.0; 3]).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        assert!(kl_div(&[0.5, 0.5], &[1.0 / 3.0; 3]).is_err());
    }

    #[test]
    fn kl_zero_target_is_floored() {
        let v = kl_div(&[0.5, 0.5, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(v.is_finite() && v > 10.0);
    }

    #[test]
    fn gemm_matches_naive_oracle_including_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 7, 5);
        let b = random_matrix(&mut rng, 5, 9);
        let c = a.matmul(&b).unwrap();
        let o = naive_matmul(&a, &b);
        for (x, y) in c.as_slice().iter().zip(o.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ · a through views
        let mut out = Matrix::zeros(5, 5);
        gemm(1.0, View::of(&a).t(), View::of(&a), 0.0, ViewMut::of(&mut out));
        let o = naive_matmul(&a.transpose(), &a);
        for (x, y) in out.as_slice().iter().zip(o.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }

        // column block times column block transposed
        let mut out = Matrix::zeros(7, 7);
        let blk = View::of(&a).col_block(1, 3);
        gemm(1.0, blk, blk.t(), 0.0, ViewMut::of(&mut out));
        let sub = Matrix::from_fn(7, 3, |r, c| a.get(r, c + 1));
        let o = naive_matmul(&sub, &sub.transpose());
        for (x, y) in out.as_slice().iter().zip(o.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        assert!(Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).is_err());
    }

    fn prob3() -> impl Strategy<Value = [f64; 3]> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_filter_map("non-degenerate", |(a, b, c)| {
            let s = a + b + c;
            (s > 1e-6).then(|| [a / s, b / s, c / s])
        })
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(l in prop::array::uniform3(-20.0f64..20.0), shift in -50.0f64..50.0, tau in 0.1f64..5.0) {
            let p = softmax_temp(&l, tau).unwrap();
            let shifted: Vec<f64> = l.iter().map(|x| x + shift).collect();
            let q = softmax_temp(&shifted, tau).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_monotone_in_logit(l in prop::array::uniform3(-10.0f64..10.0), bump in 0.0f64..5.0) {
            let p = softmax_temp(&l, 1.0).unwrap();
            let mut l2 = l;
            l2[2] += bump;
            let q = softmax_temp(&l2, 1.0).unwrap();
            prop_assert!(q[2] >= p[2] - 1e-15);
        }

        #[test]
        fn entropy_bounded_and_max_at_uniform(p in prob3()) {
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0 && h <= 3f64.ln() + 1e-12);
        }

        #[test]
        fn layer_norm_standardizes(x in prop::collection::vec(-100.0f64..100.0, 2..32)) {
            let n = x.len();
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assume!(var > 1e-3);
            let y = layer_norm(&x, &vec![1.0; n], &vec![0.0; n], 1e-12).unwrap();
            let ym = y.iter().sum::<f64>() / n as f64;
            let yv = y.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(ym.abs() < 1e-9);
            prop_assert!((yv - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = || {
            let v: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let s: f64 = v.iter().sum();
            v.map(|x| x / s)
        };
        for _ in 0..1000 {
            let (p, q) = (draw(), draw());
            assert!(kl_div(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn entropy_uniform_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hu = entropy(&[1.0 / 3.0; 3]).unwrap();
        for _ in 0..1000 {
            let e: [f64; 3] = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.0];
            let p = [1.0 / 3.0 + e[0], 1.0 / 3.0 + e[1], 1.0 / 3.0 - e[0] - e[1]];
            assert!(entropy(&p).unwrap() <= hu + 1e-15);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let gamma = [1.1, 0.9, -0.5, 2.0];
        let beta = [0.1, 0.2, 0.3, 0.4];
        let w = [0.5, -1.0, 0.25, 2.0];
        let f = |x: &[f64]| -> f64 {
            let y = layer_norm(x, &gamma, &beta, 1e-5).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut out = [0.0; 4];
        let mut xhat = [0.0; 4];
        let rstd = layer_norm_row(&x, &gamma, &beta, 1e-5, &mut out, &mut xhat);
        let (mut dg, mut db, mut dx) = ([0.0; 4], [0.0; 4], [0.0; 4]);
        layer_norm_row_backward(&w, &xhat, rstd, &gamma, &mut dg, &mut db, &mut dx);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-7, "dx[{i}]: {num} vs {}", dx[i]);
        }
        assert_eq!(db, w);
    }
}
