//! Ternary action labels from continuous demonstration deltas.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ternary::{Ternary, TernaryGrid};

/// Scale from median absolute deviation to a Gaussian-consistent sigma.
pub const MAD_TO_SIGMA: f64 = 1.4826;
/// Robust-sigma multiple used for deadbands and outlier weights.
pub const ROBUST_MULTIPLIER: f64 = 3.0;
/// Minimum noise samples per dimension for deadband calibration.
pub const MIN_NOISE_SAMPLES: usize = 30;
/// Lower bound on outlier weights so every frame keeps some influence.
pub const MIN_FRAME_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Position,
    Rotation,
    Gripper,
}

/// Per-dimension step sizes and zero bands of the action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    /// Millimetres per step on position channels.
    pub step_mm: f64,
    /// Degrees per step on rotation and gripper channels.
    pub step_deg: f64,
    pub kinds: Vec<DimKind>,
    pub deadband: Vec<f64>,
}

/// Fraction of the step size used as zero band before calibration.
pub const DEFAULT_DEADBAND_FRACTION: f64 = 0.4;

impl Default for ControlGrid {
    fn default() -> Self {
        Self::bimanual(5.0, 1.0)
    }
}

impl ControlGrid {
    /// Two arms of 3 position + 4 rotation channels, then two grippers.
    pub fn bimanual(step_mm: f64, step_deg: f64) -> Self {
        let arm = [
            DimKind::Position,
            DimKind::Position,
            DimKind::Position,
            DimKind::Rotation,
            DimKind::Rotation,
            DimKind::Rotation,
            DimKind::Rotation,
        ];
        let mut kinds: Vec<DimKind> = arm.iter().chain(arm.iter()).copied().collect();
        kinds.extend([DimKind::Gripper, DimKind::Gripper]);
        Self::with_kinds(step_mm, step_deg, kinds)
    }

    pub fn with_kinds(step_mm: f64, step_deg: f64, kinds: Vec<DimKind>) -> Self {
        let mut g = Self { step_mm, step_deg, kinds, deadband: Vec::new() };
        g.deadband = g.step_sizes().iter().map(|d| d * DEFAULT_DEADBAND_FRACTION).collect();
        g
    }

    pub fn dims(&self) -> usize {
        self.kinds.len()
    }

    /// Step size per dimension; grippers share the angular step.
    pub fn step_sizes(&self) -> Vec<f64> {
        self.kinds
            .iter()
            .map(|k| match k {
                DimKind::Position => self.step_mm,
                DimKind::Rotation | DimKind::Gripper => self.step_deg,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_mm > 0.0 && self.step_deg > 0.0) {
            return Err(invalid("step sizes must be positive"));
        }
        if self.kinds.is_empty() {
            return Err(invalid("control grid has no dimensions"));
        }
        if self.deadband.len() != self.kinds.len() {
            return Err(invalid(format!(
                "{} deadbands for {} dimensions",
                self.deadband.len(),
                self.kinds.len()
            )));
        }
        for (j, (&db, &step)) in self.deadband.iter().zip(&self.step_sizes()).enumerate() {
            if !(db >= 0.0 && db < step) {
                return Err(invalid(format!("deadband {db} on dim {j} must lie in [0, {step})")));
            }
        }
        Ok(())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `MAD · 1.4826` of a sample.
pub fn robust_sigma(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = samples.iter().map(|x| (x - m).abs()).collect();
    MAD_TO_SIGMA * median(&mut dev)
}

/// Zero bands from stationary noise, one column per dimension. Each band is
/// three robust sigmas, kept strictly below that dimension's step.
pub fn calibrate_deadband(noise: &[Vec<f64>], grid: &ControlGrid) -> Result<Vec<f64>> {
    let d = grid.dims();
    if noise.len() < MIN_NOISE_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} noise samples, at least {MIN_NOISE_SAMPLES} required",
            noise.len()
        )));
    }
    if let Some(i) = noise.iter().position(|r| r.len() != d) {
        return Err(invalid(format!("noise sample {i} has {} dims, expected {d}", noise[i].len())));
    }
    let steps = grid.step_sizes();
    (0..d)
        .map(|j| {
            let col: Vec<f64> = noise.iter().map(|r| r[j]).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite noise sample on dim {j}")));
            }
            Ok((ROBUST_MULTIPLIER * robust_sigma(&col)).min(next_down(steps[j])))
        })
        .collect()
}

/// Largest float strictly below a positive `x`.
fn next_down(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

pub fn quantize_value(delta: f64, deadband: f64) -> Ternary {
    if delta > deadband {
        Ternary::Pos
    } else if delta < -deadband {
        Ternary::Neg
    } else {
        Ternary::Zero
    }
}

/// Labels each `T × D` delta with strict inequalities against the deadband.
pub fn quantize_deltas(deltas: &[Vec<f64>], grid: &ControlGrid) -> Result<TernaryGrid> {
    grid.validate()?;
    let d = grid.dims();
    let mut out = TernaryGrid::zeros(deltas.len(), d);
    for (t, row) in deltas.iter().enumerate() {
        if row.len() != d {
            return Err(invalid(format!("delta row {t} has {} dims, expected {d}", row.len())));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(invalid(format!("non-finite delta at ({t}, {j})")));
            }
            out.set(t, j, quantize_value(v, grid.deadband[j]));
        }
    }
    Ok(out)
}

/// Per-frame weights that shrink speed spikes:
/// `w = min(1, (3σ / max(|v|, ε))²)` with `σ` the median frame speed scaled
/// by 1.4826. A zero median speed yields unit weights.
pub fn outlier_weights(timestamps: &[f64], deltas: &[Vec<f64>]) -> Result<Vec<f64>> {
    if timestamps.len() != deltas.len() {
        return Err(invalid(format!("{} timestamps for {} frames", timestamps.len(), deltas.len())));
    }
    if timestamps.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(invalid(format!("timestamps not increasing at index {}", i + 1)));
    }
    let speeds: Vec<f64> = deltas
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let dt = if t == 0 {
                timestamps.get(1).map_or(1.0, |t1| t1 - timestamps[0])
            } else {
                timestamps[t] - timestamps[t - 1]
            };
            row.iter().map(|v| v * v).sum::<f64>().sqrt() / dt
        })
        .collect();
    let mut abs = speeds.clone();
    let sigma = MAD_TO_SIGMA * median(&mut abs);
    const EPS: f64 = 1e-12;
    Ok(speeds
        .iter()
        .map(|s| {
            if sigma <= 0.0 {
                // no spread to judge against: leave every frame at full weight
                return 1.0;
            }
            let r = ROBUST_MULTIPLIER * sigma / s.abs().max(EPS);
            (r * r).clamp(MIN_FRAME_WEIGHT, 1.0)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "window")]
pub enum Smoothing {
    Off,
    Majority(usize),
}

/// Sliding-window majority vote over each column. Windows are truncated at
/// the ends; a vote without a strict plurality keeps the centre label.
pub fn majority_smooth(labels: &TernaryGrid, window: usize) -> Result<TernaryGrid> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(invalid(format!("majority window must be odd, got {window}")));
    }
    let half = window / 2;
    let t = labels.rows();
    let mut out = labels.clone();
    for j in 0..labels.cols() {
        for i in 0..t {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(t);
            let mut counts = [0usize; 3];
            for k in lo..hi {
                counts[labels.get(k, j).class_index()] += 1;
            }
            let best = (0..3).max_by_key(|&c| counts[c]).expect("three classes");
            let unique = counts.iter().filter(|&&c| c == counts[best]).count() == 1;
            if unique {
                out.set(i, j, Ternary::from_class_index(best));
            }
        }
    }
    Ok(out)
}

/// One `K × D` training target plus the mask of real (non-padding) steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelChunk {
    pub labels: TernaryGrid,
    pub mask: Vec<bool>,
}

/// Splits a label stream into `ceil(T/K)` chunks, zero-padding the last.
pub fn align_to_grid(labels: &TernaryGrid, k: usize, smoothing: Smoothing) -> Result<Vec<LabelChunk>> {
    if k == 0 {
        return Err(invalid("chunk length must be at least 1"));
    }
    if labels.rows() == 0 {
        return Err(invalid("empty label stream"));
    }
    let smoothed = match smoothing {
        Smoothing::Off => labels.clone(),
        Smoothing::Majority(w) => majority_smooth(labels, w)?,
    };
    let (t, d) = (smoothed.rows(), smoothed.cols());
    let mut chunks = Vec::with_capacity(t.div_ceil(k));
    for start in (0..t).step_by(k) {
        let mut grid = TernaryGrid::zeros(k, d);
        let mut mask = vec![false; k];
        for step in 0..k.min(t - start) {
            mask[step] = true;
            for j in 0..d {
                grid.set(step, j, smoothed.get(start + step, j));
            }
        }
        chunks.push(LabelChunk { labels: grid, mask });
    }
    Ok(chunks)
}

/// Concatenates the unmasked steps of each chunk.
pub fn reassemble(chunks: &[LabelChunk]) -> TernaryGrid {
    let d = chunks.first().map_or(0, |c| c.labels.cols());
    let rows: Vec<Vec<i8>> = chunks
        .iter()
        .flat_map(|c| (0..c.labels.rows()).filter(|&s| c.mask[s]).map(|s| c.labels.row(s).iter().map(|v| v.to_i8()).collect()))
        .collect();
    if rows.is_empty() {
        return TernaryGrid::zeros(0, d);
    }
    TernaryGrid::from_i8_rows(&rows).expect("values come from ternary labels")
}

/// A fully labeled demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub timestamps: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
    pub labels: TernaryGrid,
    pub weights: Vec<f64>,
}

pub fn label_trajectory(timestamps: Vec<f64>, deltas: Vec<Vec<f64>>, grid: &ControlGrid) -> Result<LabeledTrajectory> {
    let labels = quantize_deltas(&deltas, grid)?;
    let weights = outlier_weights(&timestamps, &deltas)?;
    Ok(LabeledTrajectory { timestamps, deltas, labels, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(db: f64) -> ControlGrid {
        let mut g = ControlGrid::with_kinds(5.0, 1.0, vec![DimKind::Position]);
        g.deadband = vec![db];
        g
    }

    #[test]
    fn default_grid_layout() {
        let g = ControlGrid::default();
        assert_eq!(g.dims(), 16);
        assert_eq!(g.kinds.iter().filter(|k| **k == DimKind::Gripper).count(), 2);
        assert_eq!(g.step_sizes()[0], 5.0);
        assert_eq!(g.step_sizes()[3], 1.0);
        g.validate().unwrap();
    }

    #[test]
    fn quantize_examples() {
        let g = grid1(2.0);
        let q = quantize_deltas(&[vec![7.0], vec![1.0], vec![-3.0], vec![2.0], vec![-2.0]], &g).unwrap();
        let got: Vec<i8> = (0..5).map(|t| q.get(t, 0).to_i8()).collect();
        assert_eq!(got, vec![1, 0, -1, 0, 0]);
    }

    #[test]
    fn quantize_rejects_nan_with_index() {
        let err = quantize_deltas(&[vec![0.0], vec![f64::NAN]], &grid1(1.0)).unwrap_err();
        assert!(err.to_string().contains("(1, 0)"));
    }

    #[test]
    fn deadband_zero_noise() {
        let g = grid1(0.0);
        let db = calibrate_deadband(&vec![vec![0.0]; 40], &g).unwrap();
        assert_eq!(db, vec![0.0]);
    }

    #[test]
    fn deadband_matches_brute_force_mad() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid1(0.0);
        let noise: Vec<Vec<f64>> = (0..101).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let db = calibrate_deadband(&noise, &g).unwrap()[0];

        // O(n²) median: the element with as many values at or below as above.
        fn brute_median(v: &[f64]) -> f64 {
            *v.iter()
                .find(|&&x| {
                    let below = v.iter().filter(|&&y| y < x).count();
                    let above = v.iter().filter(|&&y| y > x).count();
                    below <= v.len() / 2 && above <= v.len() / 2
                })
                .unwrap()
        }
        let col: Vec<f64> = noise.iter().map(|r| r[0]).collect();
        let m = brute_median(&col);
        let dev: Vec<f64> = col.iter().map(|x| (x - m).abs()).collect();
        let expect = 3.0 * 1.4826 * brute_median(&dev);
        assert!((db - expect).abs() < 1e-12);
        // uniform(-1,1) has MAD 0.5
        assert!((db - 3.0 * 1.4826 * 0.5).abs() < 0.4);
    }

    #[test]
    fn deadband_clamped_below_step() {
        let g = grid1(0.0);
        let noise: Vec<Vec<f64>> = (0..40).map(|i| vec![if i % 2 == 0 { 100.0 } else { -100.0 }]).collect();
        let db = calibrate_deadband(&noise, &g).unwrap()[0];
        assert!(db < 5.0 && db > 4.999_999);
    }

    #[test]
    fn deadband_needs_thirty_samples() {
        assert!(matches!(calibrate_deadband(&vec![vec![0.0]; 29], &grid1(0.0)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn constant_speed_gets_unit_weights() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let d = vec![vec![1.0, 2.0]; 20];
        assert!(outlier_weights(&ts, &d).unwrap().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn speed_spike_is_down_weighted() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let mut d = vec![vec![1.0]; 20];
        d[10] = vec![10.0];
        let w = outlier_weights(&ts, &d).unwrap();
        // plug-in: σ = 1.4826·10, spike speed 100 → (3·14.826/100)² ≈ 0.198
        let sigma = 1.4826 * 10.0;
        let expect = (3.0 * sigma / 100.0f64).powi(2);
        assert!((w[10] - expect).abs() < 1e-12);
        assert!(w[10] < 0.2);
        assert!(w.iter().enumerate().all(|(i, &x)| i == 10 || x == 1.0));
    }

    #[test]
    fn weights_edge_cases() {
        assert!(outlier_weights(&[], &[]).unwrap().is_empty());
        assert!(outlier_weights(&[0.0, 0.0], &[vec![1.0], vec![1.0]]).is_err());
        assert!(outlier_weights(&[0.0, 1.0, 0.5], &vec![vec![1.0]; 3]).is_err());
    }

    #[test]
    fn chunking_pads_last_chunk() {
        let labels = TernaryGrid::zeros(45, 2);
        let chunks = align_to_grid(&labels, 20, Smoothing::Off).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[2].mask.iter().filter(|&&m| m).count(), 5);
        assert!(chunks[2].mask[5..].iter().all(|&m| !m));
        assert!(align_to_grid(&labels, 0, Smoothing::Off).is_err());
    }

    #[test]
    fn majority_window_example() {
        let g = TernaryGrid::from_i8_rows(&[vec![1], vec![-1], vec![1], vec![1]]).unwrap();
        let s = majority_smooth(&g, 3).unwrap();
        let got: Vec<i8> = (0..4).map(|t| s.get(t, 0).to_i8()).collect();
        assert_eq!(got, vec![1, 1, 1, 1]);
        assert!(majority_smooth(&g, 2).is_err());
    }

    fn grid_strategy() -> impl Strategy<Value = TernaryGrid> {
        (1usize..60, 1usize..5).prop_flat_map(|(t, d)| {
            proptest::collection::vec(proptest::collection::vec(-1i8..=1, d), t)
                .prop_map(|rows| TernaryGrid::from_i8_rows(&rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sign_symmetry(v in -20.0f64..20.0, db in 0.0f64..4.9) {
            prop_assume!(v.abs() != db);
            prop_assert_eq!(quantize_value(-v, db), -quantize_value(v, db));
        }

        #[test]
        fn larger_deadband_only_moves_toward_zero(v in -20.0f64..20.0, a in 0.0f64..4.9, b in 0.0f64..4.9) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let small = quantize_value(v, lo);
            let big = quantize_value(v, hi);
            prop_assert!(big == small || big == Ternary::Zero);
        }

        #[test]
        fn quantize_matches_elementwise_oracle(rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..30)) {
            let mut g = ControlGrid::with_kinds(5.0, 1.0, vec![DimKind::Position, DimKind::Rotation, DimKind::Gripper]);
            g.deadband = vec![2.0, 0.3, 0.5];
            let q = quantize_deltas(&rows, &g).unwrap();
            for (t, r) in rows.iter().enumerate() {
                for j in 0..3 {
                    let want = if r[j] > g.deadband[j] { 1 } else if r[j] < -g.deadband[j] { -1 } else { 0 };
                    prop_assert_eq!(q.get(t, j).to_i8(), want);
                }
            }
        }

        #[test]
        fn reassembly_round_trips(g in grid_strategy(), k in 1usize..25) {
            let chunks = align_to_grid(&g, k, Smoothing::Off).unwrap();
            prop_assert_eq!(chunks.len(), g.rows().div_ceil(k));
            prop_assert_eq!(reassemble(&chunks), g);
        }

        #[test]
        fn weights_in_unit_interval(speeds in proptest::collection::vec(0.0f64..100.0, 1..50)) {
            let ts: Vec<f64> = (0..speeds.len()).map(|i| i as f64).collect();
            let d: Vec<Vec<f64>> = speeds.iter().map(|&s| vec![s]).collect();
            for w in outlier_weights(&ts, &d).unwrap() {
                prop_assert!(w > 0.0 && w <= 1.0);
            }
        }
    }
}
