//! Pinhole projection of end-effector positions and fixed-size wrist crops.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// World-to-camera transform `p_cam = R p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageDims {
    fn default() -> Self {
        Self { width: 1028, height: 800 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalib {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    #[serde(default)]
    pub image_dims: ImageDims,
    /// Accepted for compatibility; projection is distortion-free.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<Vec<f64>>,
}

impl CameraCalib {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics, image_dims: ImageDims) -> Result<Self> {
        let c = Self { intrinsics, extrinsics, image_dims, distortion: None };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || ![k.fx, k.fy, k.cx, k.cy].iter().all(|v| v.is_finite()) {
            return Err(invalid("focal lengths must be positive and finite"));
        }
        if self.image_dims.width == 0 || self.image_dims.height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        let r = &self.extrinsics.rotation;
        if !r.iter().flatten().chain(&self.extrinsics.translation).all(|v| v.is_finite()) {
            return Err(invalid("extrinsics must be finite"));
        }
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        if worst > ORTHO_TOL {
            return Err(invalid(format!("rotation is not orthonormal (max |R·Rᵀ − I| = {worst:.3e})")));
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| invalid(format!("calibration parse error: {e}")))?;
        c.validate()?;
        if c.distortion.as_ref().is_some_and(|d| d.iter().any(|v| *v != 0.0)) {
            log::warn!("lens distortion coefficients are ignored; projection uses a pure pinhole model");
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.extrinsics.rotation;
        let t = &self.extrinsics.translation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth in metres.
    pub z: f64,
}

pub fn project_point(p_world: [f64; 3], calib: &CameraCalib) -> Result<Projection> {
    let [x, y, z] = calib.to_camera(p_world);
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    let k = &calib.intrinsics;
    Ok(Projection { u: k.fx * x / z + k.cx, v: k.fy * y / z + k.cy, z })
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

/// `crop × crop` rectangle centred on `center`, shifted (never shrunk) to
/// stay inside the image.
pub fn roi_rect(center: (f64, f64), crop: u32, dims: ImageDims) -> Result<Rect> {
    if crop == 0 || crop > dims.width || crop > dims.height {
        return Err(invalid(format!("crop {crop} does not fit a {}x{} image", dims.width, dims.height)));
    }
    if !(center.0.is_finite() && center.1.is_finite()) {
        return Err(invalid("ROI centre must be finite"));
    }
    let half = crop as f64 / 2.0;
    let place = |c: f64, limit: u32| -> u32 {
        let max_start = (limit - crop) as f64;
        (c - half).round().clamp(0.0, max_start) as u32
    };
    let x0 = place(center.0, dims.width);
    let y0 = place(center.1, dims.height);
    Ok(Rect { x0, y0, x1: x0 + crop, y1: y0 + crop })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub crop: u32,
    /// Below this confidence the crop is flagged for fallback.
    pub min_confidence: f64,
    pub near_m: f64,
    pub far_m: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { crop: 256, min_confidence: 0.5, near_m: 0.05, far_m: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub value: f64,
    pub fallback: bool,
}

/// `margin · depth_ok · (1 − occlusion)`. The margin factor is the centre's
/// distance to the nearest border over half the crop, capped at 1.
pub fn roi_confidence(center: (f64, f64), z: f64, dims: ImageDims, occlusion_hint: f64, cfg: &RoiConfig) -> Confidence {
    if !(z > 0.0) || !center.0.is_finite() || !center.1.is_finite() {
        return Confidence { value: 0.0, fallback: true };
    }
    let border = center.0.min(dims.width as f64 - center.0).min(center.1).min(dims.height as f64 - center.1);
    let margin = (border / (cfg.crop as f64 / 2.0)).clamp(0.0, 1.0);
    let depth = if (cfg.near_m..=cfg.far_m).contains(&z) { 1.0 } else { 0.0 };
    let occ = if occlusion_hint.is_nan() { 1.0 } else { occlusion_hint.clamp(0.0, 1.0) };
    let value = margin * depth * (1.0 - occ);
    Confidence { value, fallback: value < cfg.min_confidence }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiCrop {
    pub side: Side,
    /// Projected pixel; `None` when the point was behind the camera.
    pub center: Option<(f64, f64)>,
    pub rect: Rect,
    pub output_size: u32,
    pub confidence: f64,
    pub fallback: bool,
}

/// Crops for both wrists. A point behind the camera yields a centred crop
/// flagged for fallback.
pub fn wrist_rois(
    left: [f64; 3],
    right: [f64; 3],
    occlusion: [f64; 2],
    calib: &CameraCalib,
    cfg: &RoiConfig,
) -> Result<[RoiCrop; 2]> {
    let dims = calib.image_dims;
    let crop = |side: Side, p: [f64; 3], occ: f64| -> Result<RoiCrop> {
        match project_point(p, calib) {
            Ok(pr) => {
                let c = roi_confidence((pr.u, pr.v), pr.z, dims, occ, cfg);
                Ok(RoiCrop {
                    side,
                    center: Some((pr.u, pr.v)),
                    rect: roi_rect((pr.u, pr.v), cfg.crop, dims)?,
                    output_size: cfg.crop,
                    confidence: c.value,
                    fallback: c.fallback,
                })
            }
            Err(Error::BehindCamera { .. }) => {
                let mid = (dims.width as f64 / 2.0, dims.height as f64 / 2.0);
                Ok(RoiCrop {
                    side,
                    center: None,
                    rect: roi_rect(mid, cfg.crop, dims)?,
                    output_size: cfg.crop,
                    confidence: 0.0,
                    fallback: true,
                })
            }
            Err(e) => Err(e),
        }
    };
    Ok([crop(Side::Left, left, occlusion[0])?, crop(Side::Right, right, occlusion[1])?])
}

/// The decoder treats the view as trustworthy only if no crop fell back.
pub fn rois_confident(crops: &[RoiCrop]) -> bool {
    crops.iter().all(|c| !c.fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn calib() -> CameraCalib {
        CameraCalib::new(
            Intrinsics { fx: 500.0, fy: 500.0, cx: 512.0, cy: 400.0 },
            Extrinsics::identity(),
            ImageDims::default(),
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let c = calib();
        let p = project_point([0.0, 0.0, 1.0], &c).unwrap();
        assert_eq!((p.u, p.v), (512.0, 400.0));
        let p = project_point([0.1, 0.0, 1.0], &c).unwrap();
        assert!((p.u - 562.0).abs() < 1e-12 && p.v == 400.0);
        assert!(matches!(project_point([0.0, 0.0, -1.0], &c), Err(Error::BehindCamera { .. })));
        assert!(matches!(project_point([0.0, 0.0, 0.0], &c), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn rect_examples() {
        let d = ImageDims::default();
        assert_eq!(roi_rect((514.0, 400.0), 256, d).unwrap(), Rect { x0: 386, y0: 272, x1: 642, y1: 528 });
        assert_eq!(roi_rect((10.0, 10.0), 256, d).unwrap(), Rect { x0: 0, y0: 0, x1: 256, y1: 256 });
        assert_eq!(roi_rect((1027.0, 799.0), 256, d).unwrap(), Rect { x0: 772, y0: 544, x1: 1028, y1: 800 });
        assert!(roi_rect((0.0, 0.0), 801, d).is_err());
    }

    #[test]
    fn confidence_examples() {
        let d = ImageDims::default();
        let cfg = RoiConfig::default();
        assert_eq!(roi_confidence((514.0, 400.0), 1.0, d, 0.0, &cfg), Confidence { value: 1.0, fallback: false });
        assert_eq!(roi_confidence((514.0, 400.0), -1.0, d, 0.0, &cfg), Confidence { value: 0.0, fallback: true });
        let c = roi_confidence((514.0, 400.0), 1.0, d, 0.6, &cfg);
        assert!((c.value - 0.4).abs() < 1e-12 && c.fallback);
    }

    #[test]
    fn rejects_bad_rotations() {
        let mut e = Extrinsics::identity();
        e.rotation[0][1] = 1e-5;
        assert!(CameraCalib::new(calib().intrinsics, e, ImageDims::default()).is_err());
        let mut e = Extrinsics::identity();
        e.rotation[2][2] = -1.0;
        assert!(CameraCalib::new(calib().intrinsics, e, ImageDims::default()).is_err());
    }

    #[test]
    fn json_round_trip_with_distortion() {
        let mut c = calib();
        c.distortion = Some(vec![0.1, 0.0, 0.0, 0.0]);
        let back = CameraCalib::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(CameraCalib::from_json("{}").is_err());
    }

    #[test]
    fn wrist_crops_fall_back_behind_camera() {
        let c = calib();
        let [l, r] = wrist_rois([0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 0.0], &c, &RoiConfig::default()).unwrap();
        assert!(!l.fallback && r.fallback && r.center.is_none());
        assert_eq!(r.rect.width(), 256);
        assert!(!rois_confident(&[l, r]));
        assert!(rois_confident(&[l]));
    }

    proptest! {
        #[test]
        fn rect_always_fits(u in -2000.0f64..3000.0, v in -2000.0f64..3000.0) {
            let d = ImageDims::default();
            let r = roi_rect((u, v), 256, d).unwrap();
            prop_assert_eq!((r.width(), r.height()), (256, 256));
            prop_assert!(r.x1 <= d.width && r.y1 <= d.height);
        }

        #[test]
        fn projection_is_scale_invariant(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..5.0, s in 0.1f64..10.0) {
            let c = calib();
            let a = project_point([x, y, z], &c).unwrap();
            let b = project_point([s * x, s * y, s * z], &c).unwrap();
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }
}
