//! Center-ness focal loss, sparse corner regression loss and mask focal loss,
//! each returning its value together with the gradient w.r.t. the head
//! output it consumes.

use serde::{Deserialize, Serialize};

use super::{
    depth_decode, dims_decode, ClassInfo, TargetMaps, COS, DEPTH, DEPTH_B0, DIMS, MIN_DEPTH, OFFSET_X, OFFSET_Y,
    REG_CHANNELS, SIN,
};
use crate::error::{Error, Result};
use crate::geometry::{corners_3d, Box3D, CameraIntrinsics, FOOTPRINT_SIGNS};
use crate::iafa::RelationMap;
use crate::tensor::Tensor;

/// Probabilities entering a log are clamped to `[FOCAL_CLAMP, 1 - FOCAL_CLAMP]`.
pub const FOCAL_CLAMP: f64 = 1e-6;

/// Smooth-L1 transition point, meters.
const SMOOTH_L1_DELTA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Same layout as the prediction the loss was computed from.
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub center: f64,
    pub reg: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { center: 1.0, reg: 1.0, mask: 1.0 }
    }
}

impl LossWeights {
    pub fn new(center: f64, reg: f64, mask: f64) -> Result<Self> {
        let w = LossWeights { center, reg, mask };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.center, self.reg, self.mask];
        if all.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative, got {all:?}")));
        }
        if all.iter().all(|&g| g == 0.0) {
            return Err(Error::Config("loss weights are all zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub center: f64,
    pub reg: f64,
    pub mask: f64,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    if ![parts.center, parts.reg, parts.mask].iter().all(|v| v.is_finite()) {
        return Err(Error::State(format!("non-finite loss part {parts:?}")));
    }
    Ok(weights.center * parts.center + weights.reg * parts.reg + weights.mask * parts.mask)
}

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < FOCAL_CLAMP {
        (FOCAL_CLAMP, false)
    } else if p > 1.0 - FOCAL_CLAMP {
        (1.0 - FOCAL_CLAMP, false)
    } else {
        (p, true)
    }
}

/// `-(1-p)^α log p` and its derivative in `p`.
#[inline]
fn focal_pos(p: f64, alpha: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let lp = p.ln();
    (-q.powf(alpha) * lp, alpha * q.powf(alpha - 1.0) * lp - q.powf(alpha) / p)
}

/// `-p^α log(1-p)` and its derivative in `p`.
#[inline]
fn focal_neg(p: f64, alpha: f64) -> (f64, f64) {
    let lq = (1.0 - p).ln();
    (-p.powf(alpha) * lq, -alpha * p.powf(alpha - 1.0) * lq + p.powf(alpha) / (1.0 - p))
}

/// Penalty-reduced focal loss over a post-sigmoid heatmap. Cells where the
/// target equals 1 are positives; the sum is divided by the positive count
/// (at least 1).
pub fn centerness_focal_loss(pred: &Tensor, target: &Tensor, alpha: f64, beta: f64) -> Result<LossValue> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("centerness_focal_loss", pred.shape(), target.shape()));
    }
    let positives = target.data().iter().filter(|&&t| t == 1.0).count().max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.numel()];
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let (p, live) = clamp_prob(p);
        let (l, d) = if t == 1.0 {
            focal_pos(p, alpha)
        } else {
            let w = (1.0 - t).powf(beta);
            let (l, d) = focal_neg(p, alpha);
            (w * l, w * d)
        };
        value += l;
        if live {
            grad[i] = d / positives;
        }
    }
    Ok(LossValue { value: value / positives, grad })
}

#[inline]
fn smooth_l1(e: f64) -> (f64, f64) {
    if e.abs() < SMOOTH_L1_DELTA {
        (0.5 * e * e / SMOOTH_L1_DELTA, e / SMOOTH_L1_DELTA)
    } else {
        (e.abs() - 0.5 * SMOOTH_L1_DELTA, e.signum())
    }
}

/// Corner loss of one object: decodes `attrs` at `cell`, compares its eight
/// corners with the ground truth's under smooth-L1 and averages over the 24
/// coordinates. Returns `(loss, d loss / d attrs, depth_clamped)`.
pub fn corner_loss_single(
    attrs: &[f64],
    cell: (usize, usize),
    gt: &Box3D,
    k: &CameraIntrinsics,
    stride: f64,
    mean_dims: [f64; 3],
) -> Result<(f64, [f64; REG_CHANNELS], bool)> {
    if attrs.len() != REG_CHANNELS {
        return Err(Error::dim("corner_loss", &[attrs.len()], &[REG_CHANNELS]));
    }
    let ki = k.inverse();
    let u = stride * (cell.0 as f64 + attrs[OFFSET_X]);
    let v = stride * (cell.1 as f64 + attrs[OFFSET_Y]);
    let ray = [ki[0][0] * u + ki[0][1] * v + ki[0][2], ki[1][1] * v + ki[1][2], 1.0];
    let raw = depth_decode(attrs[DEPTH]);
    let clamped = !(raw >= MIN_DEPTH);
    if clamped {
        log::warn!("decoded depth {raw:.3} m clamped to {MIN_DEPTH} m in corner loss");
    }
    let (depth, d_depth) = if clamped { (MIN_DEPTH, 0.0) } else { (raw, DEPTH_B0) };
    let c = ray.map(|r| r * depth);
    let dims = dims_decode([attrs[DIMS], attrs[DIMS + 1], attrs[DIMS + 2]], mean_dims);
    let [l, w, h] = dims;
    let (s, co) = (attrs[SIN], attrs[COS]);
    let bearing_norm = c[0] * c[0] + c[2] * c[2];
    let ry = s.atan2(co) + c[0].atan2(c[2]);
    let (sr, cr) = ry.sin_cos();

    let gt_corners = corners_3d(gt);
    let mut loss = 0.0;
    let mut g_c = [0.0; 3];
    let (mut g_l, mut g_w, mut g_h, mut g_ry) = (0.0, 0.0, 0.0, 0.0);
    for face in 0..2 {
        let y = c[1] + h / 2.0 - face as f64 * h;
        let dy_dh = 0.5 - face as f64;
        for (j, &(sx, sz)) in FOOTPRINT_SIGNS.iter().enumerate() {
            let (lx, lz) = (sx * l / 2.0, sz * w / 2.0);
            let x = c[0] + cr * lx + sr * lz;
            let z = c[2] - sr * lx + cr * lz;
            let target = gt_corners[face * 4 + j];
            let (fx, gx) = smooth_l1(x - target[0]);
            let (fy, gy) = smooth_l1(y - target[1]);
            let (fz, gz) = smooth_l1(z - target[2]);
            loss += fx + fy + fz;
            g_c[0] += gx;
            g_c[1] += gy;
            g_c[2] += gz;
            g_l += (gx * cr - gz * sr) * sx / 2.0;
            g_w += (gx * sr + gz * cr) * sz / 2.0;
            g_h += gy * dy_dh;
            g_ry += gx * (-sr * lx + cr * lz) + gz * (-cr * lx - sr * lz);
        }
    }
    let n = 24.0;
    // ry depends on the centroid through its bearing atan2(x, z)
    if bearing_norm > 0.0 {
        g_c[0] += g_ry * c[2] / bearing_norm;
        g_c[2] -= g_ry * c[0] / bearing_norm;
    }
    let mut grad = [0.0; REG_CHANNELS];
    grad[OFFSET_X] = g_c[0] * stride * ki[0][0] * depth;
    grad[OFFSET_Y] = (g_c[0] * ki[0][1] + g_c[1] * ki[1][1]) * stride * depth;
    grad[DEPTH] = (g_c[0] * ray[0] + g_c[1] * ray[1] + g_c[2]) * d_depth;
    grad[DIMS] = g_l * l;
    grad[DIMS + 1] = g_w * w;
    grad[DIMS + 2] = g_h * h;
    let ss = s * s + co * co;
    if ss > 0.0 {
        grad[SIN] = g_ry * co / ss;
        grad[COS] = -g_ry * s / ss;
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok((loss / n, grad, clamped))
}

/// Mean corner loss over all objects, reading attributes from a
/// `[h, w, 8]` regression map at each object's center cell. The gradient is
/// dense over the map and zero away from centers.
pub fn corners_regression_loss(
    reg: &Tensor,
    targets: &TargetMaps,
    k: &CameraIntrinsics,
    stride: f64,
    classes: &[ClassInfo],
) -> Result<LossValue> {
    let (h, w, ch) = reg.hwc()?;
    if ch != REG_CHANNELS {
        return Err(Error::dim("corners_regression_loss", reg.shape(), &[h, w, REG_CHANNELS]));
    }
    let mut grad = vec![0.0; reg.numel()];
    if targets.objects.is_empty() {
        return Ok(LossValue { value: 0.0, grad });
    }
    let n = targets.objects.len() as f64;
    let mut value = 0.0;
    for o in &targets.objects {
        let (x, y) = o.cell;
        if x >= w || y >= h {
            return Err(Error::Input(format!("center cell ({x}, {y}) outside {w}x{h} map")));
        }
        let mean =
            classes.get(o.class).ok_or_else(|| Error::Input(format!("unknown class index {}", o.class)))?.mean_dims;
        let base = (y * w + x) * REG_CHANNELS;
        let (l, g, _) = corner_loss_single(&reg.data()[base..base + REG_CHANNELS], o.cell, &o.box3d, k, stride, mean)?;
        value += l;
        for (dst, src) in grad[base..base + REG_CHANNELS].iter_mut().zip(g) {
            *dst += src / n;
        }
    }
    Ok(LossValue { value: value / n, grad })
}

/// One supervised row of the relation map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskInstance<'a> {
    /// Interior index of the object's center (the row of `G`).
    pub center: usize,
    /// Interior-resolution mask, row-major.
    pub mask: &'a [bool],
}

/// Focal loss on the relation-map row at each instance center against that
/// instance's mask, averaged over mask pixels and then over instances. With
/// `background` set, non-mask pixels add `-ŷ^α log(1-ŷ)` under the same
/// normalization. The gradient is dense over `G`.
pub fn mask_focal_loss(
    g: &RelationMap,
    instances: &[MaskInstance<'_>],
    alpha: f64,
    background: bool,
) -> Result<LossValue> {
    let d = g.size();
    let mut grad = vec![0.0; d * d];
    if instances.is_empty() {
        return Ok(LossValue { value: 0.0, grad });
    }
    let n = instances.len() as f64;
    let mut value = 0.0;
    for (j, inst) in instances.iter().enumerate() {
        if inst.mask.len() != d {
            return Err(Error::dim("mask_focal_loss", &[inst.mask.len()], &[d]));
        }
        let m = inst.mask.iter().filter(|&&b| b).count();
        if m == 0 {
            return Err(Error::Input(format!("instance {j} has an empty mask")));
        }
        let row = g.attention_row_for_center(inst.center)?;
        let norm = n * m as f64;
        let mut inst_loss = 0.0;
        for (i, (&p, &fg)) in row.iter().zip(inst.mask).enumerate() {
            if !fg && !background {
                continue;
            }
            let (p, live) = clamp_prob(p);
            let (l, dl) = if fg { focal_pos(p, alpha) } else { focal_neg(p, alpha) };
            inst_loss += l;
            if live {
                grad[inst.center * d + i] += dl / norm;
            }
        }
        value += inst_loss / m as f64;
    }
    Ok(LossValue { value: value / n, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{build_targets, encode_attributes, GtObject, TargetConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na.max(nb) == 0.0 {
            0.0
        } else {
            diff / na.max(nb)
        }
    }

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let o = x[i];
                x[i] = o + h;
                let p = f(&x);
                x[i] = o - h;
                let m = f(&x);
                x[i] = o;
                (p - m) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn weights_validation_and_total() {
        assert!(LossWeights::new(-1.0, 1.0, 1.0).is_err());
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        let parts = LossParts { center: 2.0, reg: 3.0, mask: 5.0 };
        assert_eq!(total_loss(&parts, &LossWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap(), 2.0);
        assert_eq!(total_loss(&parts, &LossWeights::default()).unwrap(), 10.0);
        let k = total_loss(&parts, &LossWeights::new(3.0, 3.0, 3.0).unwrap()).unwrap();
        assert!((k - 30.0).abs() < 1e-12);
    }

    #[test]
    fn focal_near_perfect_and_single_half() {
        let mut target = vec![0.0; 20];
        target[7] = 1.0;
        let t = Tensor::from_vec(&[4, 5, 1], target.clone()).unwrap();
        let p =
            Tensor::from_vec(&[4, 5, 1], target.iter().map(|&v| if v == 1.0 { 1.0 - 1e-6 } else { 1e-6 }).collect())
                .unwrap();
        assert!(centerness_focal_loss(&p, &t, 2.0, 4.0).unwrap().value < 1e-4);

        let one = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let half = Tensor::from_vec(&[1, 1, 1], vec![0.5]).unwrap();
        let v = centerness_focal_loss(&half, &one, 2.0, 4.0).unwrap().value;
        assert!((v + 0.25 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn focal_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 30;
            let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.99)).collect();
            t[rng.gen_range(0..n)] = 1.0;
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
            let tt = Tensor::from_vec(&[5, 6, 1], t).unwrap();
            let f = |x: &[f64]| {
                centerness_focal_loss(&Tensor::from_vec(&[5, 6, 1], x.to_vec()).unwrap(), &tt, 2.0, 4.0).unwrap().value
            };
            let an =
                centerness_focal_loss(&Tensor::from_vec(&[5, 6, 1], p.clone()).unwrap(), &tt, 2.0, 4.0).unwrap().grad;
            assert!(rel_err(&an, &fd(f, &p, 1e-7)) < 1e-5);
        }
    }

    fn scene_k() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, 48.0, 16.0).unwrap()
    }

    #[test]
    fn corner_loss_zero_and_translation() {
        let k = scene_k();
        let mean = ClassInfo::car().mean_dims;
        let gt = Box3D::new([0.5, 1.65, 10.0], [4.0, 1.6, 1.5], 0.3).unwrap();
        let (cell, a) = encode_attributes(&gt, &k, 4.0, mean).unwrap();
        let (l, g, _) = corner_loss_single(&a, cell, &gt, &k, 4.0, mean).unwrap();
        assert!(l < 1e-20);
        assert!(g.iter().all(|v| v.abs() < 1e-9));

        let mut shifted = gt;
        shifted.center[0] += 1.0;
        let (l, _, _) = corner_loss_single(&a, cell, &shifted, &k, 4.0, mean).unwrap();
        assert!((l - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn corner_gradient_matches_fd() {
        let k = CameraIntrinsics::with_skew(60.0, 55.0, 48.0, 16.0, 0.7).unwrap();
        let mean = ClassInfo::car().mean_dims;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let gt = Box3D::new(
                [rng.gen_range(-4.0..4.0), 1.65, rng.gen_range(6.0..20.0)],
                [rng.gen_range(3.0..4.5), rng.gen_range(1.4..1.9), rng.gen_range(1.3..1.8)],
                rng.gen_range(-3.0..3.0),
            )
            .unwrap();
            let (cell, mut a) = encode_attributes(&gt, &k, 4.0, mean).unwrap();
            for v in a.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
            let f = |x: &[f64]| corner_loss_single(x, cell, &gt, &k, 4.0, mean).unwrap().0;
            let (_, an, _) = corner_loss_single(&a, cell, &gt, &k, 4.0, mean).unwrap();
            let err = rel_err(&an, &fd(f, &a, 1e-6));
            assert!(err < 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn corners_map_loss_perfect() {
        let k = scene_k();
        let classes = [ClassInfo::car()];
        let gt = Box3D::new([0.5, 1.65, 10.0], [4.0, 1.6, 1.5], 0.3).unwrap();
        let t = build_targets(
            &[GtObject { class: 0, box3d: gt, mask: None }],
            &k,
            (32, 96),
            &classes,
            &TargetConfig::default(),
        )
        .unwrap();
        let mut reg = Tensor::zeros(&[8, 24, REG_CHANNELS]).unwrap();
        let o = &t.objects[0];
        let base = (o.cell.1 * 24 + o.cell.0) * REG_CHANNELS;
        reg.data_mut()[base..base + REG_CHANNELS].copy_from_slice(&o.attrs);
        assert!(corners_regression_loss(&reg, &t, &k, 4.0, &classes).unwrap().value < 1e-20);
    }

    #[test]
    fn mask_loss_cases() {
        // single pixel instance at 0.5
        let g = RelationMap::from_rows(1, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let mask = [true, false];
        let v = mask_focal_loss(&g, &[MaskInstance { center: 0, mask: &mask }], 2.0, false).unwrap().value;
        assert!((v + 0.25 * 0.5f64.ln()).abs() < 1e-15);

        // perfect foreground
        let g = RelationMap::from_rows(1, 2, vec![1.0 - 1e-6, 1e-6, 0.5, 0.5]).unwrap();
        assert!(mask_focal_loss(&g, &[MaskInstance { center: 0, mask: &mask }], 2.0, false).unwrap().value < 1e-5);

        let empty = [false, false];
        assert!(mask_focal_loss(&g, &[MaskInstance { center: 0, mask: &empty }], 2.0, false).is_err());
    }

    #[test]
    fn mask_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 6;
        let masks: Vec<Vec<bool>> = (0..2).map(|_| (0..d).map(|_| rng.gen_bool(0.5)).collect()).collect();
        let masks: Vec<Vec<bool>> = masks
            .into_iter()
            .map(|mut m| {
                m[0] = true;
                m
            })
            .collect();
        for bg in [false, true] {
            let vals: Vec<f64> = (0..d * d).map(|_| rng.gen_range(0.02..0.98)).collect();
            let inst = [MaskInstance { center: 1, mask: &masks[0] }, MaskInstance { center: 4, mask: &masks[1] }];
            let f = |x: &[f64]| {
                mask_focal_loss(&RelationMap::from_rows(2, 3, x.to_vec()).unwrap(), &inst, 2.0, bg).unwrap().value
            };
            let an =
                mask_focal_loss(&RelationMap::from_rows(2, 3, vals.clone()).unwrap(), &inst, 2.0, bg).unwrap().grad;
            assert!(rel_err(&an, &fd(f, &vals, 1e-7)) < 1e-6);
        }
    }
}
