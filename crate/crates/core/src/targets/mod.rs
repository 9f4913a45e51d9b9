//! Training targets: Gaussian center heatmaps, per-center regression
//! attributes and interior-resolution instance masks.

mod losses;

pub use losses::{
    centerness_focal_loss, corner_loss_single, corners_regression_loss, mask_focal_loss, total_loss, LossParts,
    LossValue, LossWeights, MaskInstance, FOCAL_CLAMP,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    box2d, project_center, recover_center, ry_to_theta, theta_to_ry, Box3D, CameraIntrinsics, ObservationAngle,
};
use crate::tensor::Tensor;

/// Regression channel layout.
pub const REG_CHANNELS: usize = 8;
pub const OFFSET_X: usize = 0;
pub const OFFSET_Y: usize = 1;
pub const DEPTH: usize = 2;
pub const DIMS: usize = 3;
pub const SIN: usize = 6;
pub const COS: usize = 7;

pub const DEPTH_A0: f64 = 12.5;
pub const DEPTH_B0: f64 = 12.5;
pub const DEPTH_MAX: f64 = DEPTH_A0 + DEPTH_B0;
/// Decoded depths are floored here so back-projection stays defined.
pub const MIN_DEPTH: f64 = 0.1;

pub fn depth_decode(x: f64) -> f64 {
    DEPTH_A0 + DEPTH_B0 * x
}

/// Inverse of [`depth_decode`]. Depths beyond the codec range saturate at 1.
pub fn depth_encode(depth: f64) -> Result<f64> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::Input(format!("depth must be positive, got {depth}")));
    }
    if depth > DEPTH_MAX {
        log::warn!("depth {depth:.2} m beyond codec range, saturating at {DEPTH_MAX} m");
        return Ok(1.0);
    }
    Ok((depth - DEPTH_A0) / DEPTH_B0)
}

pub fn dims_decode(delta: [f64; 3], mean: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| mean[i] * delta[i].exp())
}

pub fn dims_encode(dims: [f64; 3], mean: [f64; 3]) -> Result<[f64; 3]> {
    if dims.iter().chain(&mean).any(|&d| !(d > 0.0)) {
        return Err(Error::Input(format!("dims {dims:?} and means {mean:?} must be positive")));
    }
    Ok([0, 1, 2].map(|i| (dims[i] / mean[i]).ln()))
}

/// Largest radius `r` such that a box whose corners are displaced by `r`
/// still overlaps the original `w × h` box by at least `min_overlap`.
///
/// Three displacement patterns are considered (both corners moved together,
/// both moved inward, both moved outward); each yields a quadratic whose
/// smaller nonnegative root bounds `r`.
pub fn corner_radius(extent: (f64, f64), min_overlap: f64) -> Result<f64> {
    let (w, h) = extent;
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::Input(format!("box extents must be positive, got {w}x{h}")));
    }
    if !(min_overlap > 0.0 && min_overlap < 1.0) {
        return Err(Error::Input(format!("min_overlap must lie in (0,1), got {min_overlap}")));
    }
    let o = min_overlap;
    let sum = w + h;
    let area = w * h;
    // shifted: (w-r)(h-r) / (2wh - (w-r)(h-r)) >= o
    let c1 = area * (1.0 - o) / (1.0 + o);
    let r1 = (sum - (sum * sum - 4.0 * c1).sqrt()) / 2.0;
    // shrunk: (w-2r)(h-2r) / wh >= o
    let r2 = (2.0 * sum - (4.0 * sum * sum - 16.0 * area * (1.0 - o)).sqrt()) / 8.0;
    // grown: wh / ((w+2r)(h+2r)) >= o
    let r3 = (-2.0 * sum + (4.0 * sum * sum - 16.0 * area * (1.0 - 1.0 / o)).sqrt()) / 8.0;
    Ok(r1.min(r2).min(r3).max(0.0))
}

/// Size-adaptive heatmap standard deviation, `max(sigma_min, (2r + 1) / 6)`.
pub fn gaussian_radius(extent: (f64, f64), min_overlap: f64, sigma_min: f64) -> Result<f64> {
    let r = corner_radius(extent, min_overlap)?;
    Ok(((2.0 * r + 1.0) / 6.0).max(sigma_min))
}

/// A heatmap peak: feature cell `(x, y)` and class channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatCenter {
    pub x: usize,
    pub y: usize,
    pub class: usize,
}

/// Largest value below one; non-peak cells never reach it, so each center is
/// the only cell equal to 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Draws one Gaussian bump per center into a `[h, w, classes]` map, combining
/// overlaps by elementwise maximum.
pub fn splat_heatmap(centers: &[HeatCenter], sigmas: &[f64], shape: (usize, usize, usize)) -> Result<Tensor> {
    let (h, w, classes) = shape;
    if centers.len() != sigmas.len() {
        return Err(Error::dim("splat_heatmap", &[centers.len()], &[sigmas.len()]));
    }
    let mut map = Tensor::zeros(&[h, w, classes])?;
    let data = map.data_mut();
    for (c, &sigma) in centers.iter().zip(sigmas) {
        if c.x >= w || c.y >= h || c.class >= classes {
            return Err(Error::Input(format!(
                "center ({}, {}) class {} outside {w}x{h}x{classes} grid",
                c.x, c.y, c.class
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
        }
        let denom = 2.0 * sigma * sigma;
        for y in 0..h {
            let dy = y as f64 - c.y as f64;
            for x in 0..w {
                let dx = x as f64 - c.x as f64;
                let v = if x == c.x && y == c.y { 1.0 } else { (-(dx * dx + dy * dy) / denom).exp().min(BELOW_ONE) };
                let slot = &mut data[(y * w + x) * classes + c.class];
                *slot = slot.max(v);
            }
        }
    }
    Ok(map)
}

/// Cell and attribute vector encoding `b` at the given stride.
pub fn encode_attributes(
    b: &Box3D,
    k: &CameraIntrinsics,
    stride: f64,
    mean_dims: [f64; 3],
) -> Result<((usize, usize), [f64; REG_CHANNELS])> {
    let (u, v) = project_center(b, k)?;
    let (gx, gy) = (u / stride, v / stride);
    if !(gx >= 0.0 && gy >= 0.0) {
        return Err(Error::Input(format!("projected center ({u:.2}, {v:.2}) lies left of or above the image")));
    }
    let cell = (gx.floor() as usize, gy.floor() as usize);
    let centroid = b.centroid();
    let delta = dims_encode(b.dims, mean_dims)?;
    let (s, c) = ry_to_theta(b.ry, centroid).sin_cos();
    let mut a = [0.0; REG_CHANNELS];
    a[OFFSET_X] = gx - cell.0 as f64;
    a[OFFSET_Y] = gy - cell.1 as f64;
    a[DEPTH] = depth_encode(centroid[2])?;
    a[DIMS..DIMS + 3].copy_from_slice(&delta);
    a[SIN] = s;
    a[COS] = c;
    Ok((cell, a))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedBox {
    pub box3d: Box3D,
    /// The raw depth fell below [`MIN_DEPTH`] and was clamped.
    pub depth_clamped: bool,
}

/// Inverse of [`encode_attributes`].
pub fn decode_attributes(
    cell: (usize, usize),
    a: &[f64],
    k: &CameraIntrinsics,
    stride: f64,
    mean_dims: [f64; 3],
) -> Result<DecodedBox> {
    if a.len() != REG_CHANNELS {
        return Err(Error::dim("decode_attributes", &[a.len()], &[REG_CHANNELS]));
    }
    let raw = depth_decode(a[DEPTH]);
    let depth_clamped = !(raw >= MIN_DEPTH);
    let depth = if depth_clamped { MIN_DEPTH } else { raw };
    let centroid = recover_center(cell, (a[OFFSET_X], a[OFFSET_Y]), depth, k, stride)?;
    let dims = dims_decode([a[DIMS], a[DIMS + 1], a[DIMS + 2]], mean_dims);
    let ry = theta_to_ry(ObservationAngle::from_sin_cos(a[SIN], a[COS]), centroid);
    Ok(DecodedBox { box3d: Box3D::from_centroid(centroid, dims, ry), depth_clamped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    /// Mean `(l, w, h)` in meters.
    pub mean_dims: [f64; 3],
}

impl ClassInfo {
    pub fn car() -> Self {
        ClassInfo { name: "Car".into(), mean_dims: [3.88, 1.63, 1.53] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    /// Feature stride relative to the image.
    pub stride: usize,
    /// Additional downscale of the attention grid relative to the features.
    pub interior_downscale: usize,
    pub min_overlap: f64,
    pub sigma_min: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { stride: 4, interior_downscale: 2, min_overlap: 0.7, sigma_min: 0.5 }
    }
}

impl TargetConfig {
    pub fn mask_factor(&self) -> usize {
        self.stride * self.interior_downscale
    }
}

/// A ground-truth object as handed to target construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GtObject {
    pub class: usize,
    pub box3d: Box3D,
    /// Image-resolution visible mask, row-major; `None` excludes the object
    /// from mask supervision only.
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTarget {
    pub class: usize,
    /// Feature cell `(x, y)` holding the projected centroid.
    pub cell: (usize, usize),
    pub attrs: [f64; REG_CHANNELS],
    pub box3d: Box3D,
    pub sigma: f64,
    /// Row-major index of the center on the attention grid.
    pub interior_index: usize,
    /// Attention-grid mask, row-major.
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetMaps {
    /// `[H/stride, W/stride, classes]`.
    pub heatmap: Tensor,
    pub objects: Vec<ObjectTarget>,
    /// Attention grid `(h, w)`.
    pub interior: (usize, usize),
}

impl TargetMaps {
    pub fn mask_instances(&self) -> Vec<MaskInstance<'_>> {
        self.objects
            .iter()
            .filter_map(|o| o.mask.as_deref().map(|m| MaskInstance { center: o.interior_index, mask: m }))
            .collect()
    }
}

/// Max-pools a row-major `h × w` mask by `factor`: a coarse cell is set when
/// any pixel under it is.
pub fn pool_mask(mask: &[bool], h: usize, w: usize, factor: usize) -> Result<Vec<bool>> {
    if mask.len() != h * w {
        return Err(Error::dim("pool_mask", &[mask.len()], &[h, w]));
    }
    if factor == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(Error::Config(format!("mask {h}x{w} not divisible by {factor}")));
    }
    let (ph, pw) = (h / factor, w / factor);
    let mut out = vec![false; ph * pw];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                out[(y / factor) * pw + x / factor] = true;
            }
        }
    }
    Ok(out)
}

/// Encodes ground truth for an `image_h × image_w` image.
pub fn build_targets(
    objects: &[GtObject],
    k: &CameraIntrinsics,
    image: (usize, usize),
    classes: &[ClassInfo],
    cfg: &TargetConfig,
) -> Result<TargetMaps> {
    let (ih, iw) = image;
    let factor = cfg.mask_factor();
    if ih % factor != 0 || iw % factor != 0 {
        return Err(Error::Config(format!("image {iw}x{ih} not divisible by {factor}")));
    }
    let stride = cfg.stride as f64;
    let (fh, fw) = (ih / cfg.stride, iw / cfg.stride);
    let interior = (ih / factor, iw / factor);
    let mut centers = Vec::with_capacity(objects.len());
    let mut sigmas = Vec::with_capacity(objects.len());
    let mut out = Vec::with_capacity(objects.len());
    for (i, o) in objects.iter().enumerate() {
        let class =
            classes.get(o.class).ok_or_else(|| Error::Input(format!("object {i}: unknown class index {}", o.class)))?;
        let (cell, attrs) = encode_attributes(&o.box3d, k, stride, class.mean_dims)?;
        if cell.0 >= fw || cell.1 >= fh {
            return Err(Error::Input(format!("object {i}: projected center outside the image")));
        }
        let [l, t, r, b] = box2d(&o.box3d, k)?;
        let extent = ((r.min(iw as f64) - l.max(0.0)) / stride, (b.min(ih as f64) - t.max(0.0)) / stride);
        let sigma = gaussian_radius(extent, cfg.min_overlap, cfg.sigma_min)?;
        let mask = match &o.mask {
            Some(m) => {
                let pooled = pool_mask(m, ih, iw, factor)?;
                if !pooled.iter().any(|&v| v) {
                    return Err(Error::Input(format!("object {i}: empty instance mask")));
                }
                Some(pooled)
            }
            None => None,
        };
        let d = cfg.interior_downscale;
        centers.push(HeatCenter { x: cell.0, y: cell.1, class: o.class });
        sigmas.push(sigma);
        out.push(ObjectTarget {
            class: o.class,
            cell,
            attrs,
            box3d: o.box3d,
            sigma,
            interior_index: (cell.1 / d) * interior.1 + cell.0 / d,
            mask,
        });
    }
    let heatmap = splat_heatmap(&centers, &sigmas, (fh, fw, classes.len()))?;
    Ok(TargetMaps { heatmap, objects: out, interior })
}
