//! Deterministic synthetic street scenes with exact visible-region masks.
//!
//! Boxes stand on a flat ground plane seen from a camera 1.65 m above it.
//! Objects are painted far-to-near by centroid depth, each covering the
//! convex hull of its projected corners, so a pixel belongs to the visible
//! mask of the nearest object whose hull covers it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kitti::KittiLabel;
use crate::error::{Error, Result};
use crate::geometry::{corners_3d, iou_bev, project_center, ry_to_theta, Box3D, CameraIntrinsics};
use crate::targets::{build_targets, ClassInfo, GtObject, TargetConfig, TargetMaps};
use crate::tensor::Tensor;

pub const CAMERA_HEIGHT: f64 = 1.65;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    /// Inclusive object count range.
    pub objects: (usize, usize),
    pub depth_range: (f64, f64),
    /// Relative jitter applied to each class-mean dimension.
    pub dims_jitter: f64,
    /// Place later objects behind earlier ones so projected centers tend to
    /// land on an occluder.
    pub occlusion_heavy: bool,
    /// Minimum Chebyshev distance between center cells on the feature grid.
    pub min_center_spacing: usize,
    pub stride: usize,
    /// Every object must own this many `mask_cell`-sized blocks that no
    /// other object's visible region touches. Zero only asks for a nonempty
    /// visible region.
    pub min_exclusive_cells: usize,
    /// Block size in pixels for `min_exclusive_cells`; matches the pooling
    /// of masks onto the attention grid.
    pub mask_cell: usize,
    pub class: ClassInfo,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 96,
            height: 32,
            intrinsics: CameraIntrinsics { fx: 40.0, fy: 40.0, px: 48.0, py: 12.0, skew: 0.0 },
            objects: (2, 4),
            depth_range: (4.0, 24.0),
            dims_jitter: 0.1,
            occlusion_heavy: false,
            min_center_spacing: 2,
            stride: 4,
            min_exclusive_cells: 0,
            mask_cell: 8,
            class: ClassInfo::car(),
        }
    }
}

impl SceneConfig {
    pub fn occlusion_heavy() -> Self {
        SceneConfig { occlusion_heavy: true, objects: (3, 4), min_exclusive_cells: 1, ..SceneConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if self.width == 0 || self.height == 0 || self.stride == 0 || self.mask_cell == 0 {
            return Err(Error::Config("scene extents and stride must be positive".into()));
        }
        if !(lo > 0.0 && hi >= lo && hi <= crate::targets::DEPTH_MAX) {
            return Err(Error::Config(format!("depth range ({lo}, {hi}) must lie in (0, 25]")));
        }
        if self.objects.0 == 0 || self.objects.1 < self.objects.0 {
            return Err(Error::Config(format!("bad object count range {:?}", self.objects)));
        }
        if !(0.0..1.0).contains(&self.dims_jitter) {
            return Err(Error::Config(format!("dims jitter {} must lie in [0, 1)", self.dims_jitter)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class: usize,
    pub box3d: Box3D,
    pub albedo: [f64; 3],
    /// Pixels where this object is the nearest covering hull, row-major.
    pub visible_mask: Vec<bool>,
    /// Every pixel covered by the projected hull.
    pub hull_mask: Vec<bool>,
    /// Projected-hull 2D box clipped to the image.
    pub bbox: [f64; 4],
    pub truncation: f64,
    pub occlusion: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub class: ClassInfo,
    pub objects: Vec<SceneObject>,
    /// `[height, width, 3]`, values in `[0, 1]`.
    pub image: Tensor,
}

impl SyntheticScene {
    pub fn gt_objects(&self) -> Vec<GtObject> {
        self.objects
            .iter()
            .map(|o| GtObject { class: o.class, box3d: o.box3d, mask: Some(o.visible_mask.clone()) })
            .collect()
    }

    pub fn targets(&self, cfg: &TargetConfig) -> Result<TargetMaps> {
        build_targets(
            &self.gt_objects(),
            &self.intrinsics,
            (self.height, self.width),
            std::slice::from_ref(&self.class),
            cfg,
        )
    }

    pub fn labels(&self) -> Vec<KittiLabel> {
        self.objects
            .iter()
            .map(|o| {
                let [l, w, h] = o.box3d.dims;
                KittiLabel {
                    class: self.class.name.clone(),
                    truncation: o.truncation,
                    occlusion: o.occlusion,
                    alpha: ry_to_theta(o.box3d.ry, o.box3d.centroid()).0,
                    bbox: o.bbox,
                    dims_hwl: [h, w, l],
                    location: o.box3d.center,
                    rotation_y: o.box3d.ry,
                    score: None,
                }
            })
            .collect()
    }

    /// Pixel holding the projected centroid of object `i`.
    pub fn center_pixel(&self, i: usize) -> Result<(usize, usize)> {
        let (u, v) = project_center(&self.objects[i].box3d, &self.intrinsics)?;
        Ok((u.floor() as usize, v.floor() as usize))
    }

    /// `(occluded, occluder)` pairs where the occluded object's projected
    /// center falls inside the occluder's visible mask.
    pub fn misaligned_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.objects.len() {
            let Ok((x, y)) = self.center_pixel(i) else {
                continue;
            };
            let p = y * self.width + x;
            for (j, o) in self.objects.iter().enumerate() {
                if j != i && o.visible_mask[p] {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Projected {
    hull: [(f64, f64); 8],
    hull_len: usize,
    faces: [([(f64, f64); 4], f64); 6],
    front: [bool; 6],
}

const FACES: [[usize; 4]; 6] = [[0, 1, 2, 3], [4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]];

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross2(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; returns the hull counter-clockwise in image
/// coordinates and its length.
fn convex_hull(points: &[(f64, f64); 8]) -> ([(f64, f64); 8], usize) {
    let mut pts = *points;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull = [(0.0, 0.0); 16];
    let mut k = 0;
    for &p in &pts {
        while k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0.0 {
            k -= 1;
        }
        hull[k] = p;
        k += 1;
    }
    let lower = k + 1;
    for &p in pts.iter().rev().skip(1) {
        while k >= lower && cross2(hull[k - 2], hull[k - 1], p) <= 0.0 {
            k -= 1;
        }
        hull[k] = p;
        k += 1;
    }
    let n = k - 1;
    let mut out = [(0.0, 0.0); 8];
    out[..n].copy_from_slice(&hull[..n]);
    (out, n)
}

/// Inclusive point-in-convex-polygon test for either winding.
fn inside(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let (mut pos, mut neg) = (false, false);
    for i in 0..poly.len() {
        let c = cross2(poly[i], poly[(i + 1) % poly.len()], p);
        pos |= c > 0.0;
        neg |= c < 0.0;
        if pos && neg {
            return false;
        }
    }
    true
}

fn project_box(b: &Box3D, k: &CameraIntrinsics) -> Result<Projected> {
    let corners = corners_3d(b);
    let mut img = [(0.0, 0.0); 8];
    for (dst, &c) in img.iter_mut().zip(&corners) {
        *dst = k.project(c)?;
    }
    let (hull, hull_len) = convex_hull(&img);
    let centroid = b.centroid();
    // light from above, slightly left and toward the camera
    let light = {
        let l = [-0.4, -1.0, -0.6];
        let n = dot(l, l).sqrt();
        l.map(|v| v / n)
    };
    let mut faces = [([(0.0, 0.0); 4], 0.0); 6];
    let mut front = [false; 6];
    for (f, idx) in FACES.iter().enumerate() {
        let mid = idx.iter().fold([0.0; 3], |acc, &i| {
            let c = corners[i];
            [acc[0] + c[0] / 4.0, acc[1] + c[1] / 4.0, acc[2] + c[2] / 4.0]
        });
        let normal = sub(mid, centroid);
        let len = dot(normal, normal).sqrt();
        let unit = normal.map(|v| v / len);
        front[f] = dot(normal, mid) < 0.0;
        let shade = 0.35 + 0.65 * dot(unit, light).max(0.0);
        faces[f] = (idx.map(|i| img[i]), shade);
    }
    Ok(Projected { hull, hull_len, faces, front })
}

fn ground_shade(cfg_k: &CameraIntrinsics, v: f64) -> f64 {
    let below = v - cfg_k.py;
    if below <= 0.0 {
        return 0.8;
    }
    let z = cfg_k.fy * CAMERA_HEIGHT / below;
    0.15 + 0.35 * (-z / 20.0).exp()
}

struct Rendered {
    image: Tensor,
    owner: Vec<Option<usize>>,
    hulls: Vec<Vec<bool>>,
}

/// Paints boxes far-to-near onto a shaded ground/sky background.
fn render(boxes: &[(Box3D, [f64; 3])], k: &CameraIntrinsics, width: usize, height: usize) -> Result<Rendered> {
    let mut data = vec![0.0; width * height * 3];
    for y in 0..height {
        let g = ground_shade(k, y as f64 + 0.5);
        for x in 0..width {
            let p = (y * width + x) * 3;
            data[p] = g;
            data[p + 1] = g;
            data[p + 2] = g * 1.1 + 0.05;
        }
    }
    let mut owner = vec![None; width * height];
    let mut hulls = vec![vec![false; width * height]; boxes.len()];
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].0.center[2].total_cmp(&boxes[a].0.center[2]).then(b.cmp(&a)));
    for i in order {
        let (b, albedo) = &boxes[i];
        let proj = project_box(b, k)?;
        let hull = &proj.hull[..proj.hull_len];
        for y in 0..height {
            for x in 0..width {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                if !inside(hull, p) {
                    continue;
                }
                let shade = (0..6)
                    .filter(|&f| proj.front[f] && inside(&proj.faces[f].0, p))
                    .map(|f| proj.faces[f].1)
                    .next()
                    .unwrap_or(0.35);
                let at = y * width + x;
                hulls[i][at] = true;
                owner[at] = Some(i);
                for c in 0..3 {
                    data[at * 3 + c] = (albedo[c] * shade).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(Rendered { image: Tensor::from_vec(&[height, width, 3], data)?, owner, hulls })
}

/// Per object, the number of `cell`-sized blocks where it is the only
/// object with visible pixels.
fn exclusive_cells(owner: &[Option<usize>], n: usize, width: usize, height: usize, cell: usize) -> Vec<usize> {
    let (cw, ch) = (width.div_ceil(cell), height.div_ceil(cell));
    let mut counts = vec![0; n];
    for cy in 0..ch {
        for cx in 0..cw {
            let mut seen: Option<usize> = None;
            let mut shared = false;
            for y in cy * cell..((cy + 1) * cell).min(height) {
                for x in cx * cell..((cx + 1) * cell).min(width) {
                    match (owner[y * width + x], seen) {
                        (Some(o), None) => seen = Some(o),
                        (Some(o), Some(s)) if o != s => shared = true,
                        _ => {}
                    }
                }
            }
            if let (Some(o), false) = (seen, shared) {
                counts[o] += 1;
            }
        }
    }
    counts
}

fn occlusion_level(visible: usize, hull: usize) -> i32 {
    let frac = visible as f64 / hull.max(1) as f64;
    if frac >= 0.99 {
        0
    } else if frac >= 0.5 {
        1
    } else {
        2
    }
}

fn assemble(seed: u64, cfg: &SceneConfig, boxes: Vec<(Box3D, [f64; 3])>) -> Result<SyntheticScene> {
    let (w, h) = (cfg.width, cfg.height);
    let r = render(&boxes, &cfg.intrinsics, w, h)?;
    let mut objects = Vec::with_capacity(boxes.len());
    for (i, (b, albedo)) in boxes.iter().enumerate() {
        let visible: Vec<bool> = r.owner.iter().map(|&o| o == Some(i)).collect();
        let raw = crate::geometry::box2d(b, &cfg.intrinsics)?;
        let bbox = [
            raw[0].clamp(0.0, w as f64),
            raw[1].clamp(0.0, h as f64),
            raw[2].clamp(0.0, w as f64),
            raw[3].clamp(0.0, h as f64),
        ];
        let full = (raw[2] - raw[0]) * (raw[3] - raw[1]);
        let kept = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]);
        let hull_px = r.hulls[i].iter().filter(|&&v| v).count();
        let vis_px = visible.iter().filter(|&&v| v).count();
        objects.push(SceneObject {
            class: 0,
            box3d: *b,
            albedo: *albedo,
            visible_mask: visible,
            hull_mask: r.hulls[i].clone(),
            bbox,
            truncation: (1.0 - kept / full).clamp(0.0, 1.0),
            occlusion: occlusion_level(vis_px, hull_px),
        });
    }
    Ok(SyntheticScene {
        seed,
        width: w,
        height: h,
        intrinsics: cfg.intrinsics,
        class: cfg.class.clone(),
        objects,
        image: r.image,
    })
}

fn cell_of(b: &Box3D, cfg: &SceneConfig) -> Result<(usize, usize)> {
    let (u, v) = project_center(b, &cfg.intrinsics)?;
    let s = cfg.stride as f64;
    Ok(((u / s).floor() as usize, (v / s).floor() as usize))
}

/// Whether `cand` can join `placed`: centroid projects inside the image,
/// all corners are in front of the camera, center cells are spaced, and no
/// footprints overlap.
fn admissible(cand: &Box3D, placed: &[(Box3D, [f64; 3])], cfg: &SceneConfig) -> bool {
    if corners_3d(cand).iter().any(|c| c[2] < 0.5) {
        return false;
    }
    let Ok((u, v)) = project_center(cand, &cfg.intrinsics) else {
        return false;
    };
    if !(u >= 0.0 && v >= 0.0 && u < cfg.width as f64 && v < cfg.height as f64) {
        return false;
    }
    let Ok(cell) = cell_of(cand, cfg) else {
        return false;
    };
    placed.iter().all(|(b, _)| {
        let other = cell_of(b, cfg).expect("placed boxes project");
        let cheb = cell.0.abs_diff(other.0).max(cell.1.abs_diff(other.1));
        cheb >= cfg.min_center_spacing && iou_bev(cand, b) == 0.0
    })
}

fn sample_box(rng: &mut ChaCha8Rng, cfg: &SceneConfig, anchor: Option<&Box3D>) -> Box3D {
    let k = &cfg.intrinsics;
    let (lo, hi) = cfg.depth_range;
    let j = cfg.dims_jitter;
    let dims = cfg.class.mean_dims.map(|m| m * (1.0 + rng.gen_range(-j..=j)));
    let ry = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (u, z) = match anchor {
        Some(a) if a.center[2] + 3.0 <= hi => {
            let (au, _) = project_center(a, k).unwrap_or((k.px, k.py));
            let z = rng.gen_range(a.center[2] + 3.0..=(a.center[2] + 8.0).min(hi));
            // just far enough sideways to clear the center-spacing rule
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let gap = cfg.min_center_spacing as f64 * cfg.stride as f64;
            (au + side * rng.gen_range(gap..gap + 4.0), z)
        }
        // occluders come from the near half so they cover more of the frame
        _ if cfg.occlusion_heavy => (rng.gen_range(2.0..cfg.width as f64 - 2.0), rng.gen_range(lo..=(lo + hi) / 2.0)),
        _ => (rng.gen_range(2.0..cfg.width as f64 - 2.0), rng.gen_range(lo..=hi)),
    };
    let centroid_y = CAMERA_HEIGHT - dims[2] / 2.0;
    // choose x so the centroid projects to column u at depth z
    let x = (u - k.px - k.skew * centroid_y / z) * z / k.fx;
    Box3D { center: [x, CAMERA_HEIGHT, z], dims, ry }
}

/// Generates one scene. Identical seeds give bit-identical scenes.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.objects.0..=cfg.objects.1);
    let mut placed: Vec<(Box3D, [f64; 3])> = Vec::with_capacity(n);
    for i in 0..n {
        let mut ok = false;
        for _ in 0..MAX_ATTEMPTS {
            let anchor = if cfg.occlusion_heavy && !placed.is_empty() && rng.gen_bool(0.9) {
                let a = rng.gen_range(0..placed.len());
                Some(placed[a].0)
            } else {
                None
            };
            let cand = sample_box(&mut rng, cfg, anchor.as_ref());
            let albedo = [0, 1, 2].map(|_| rng.gen_range(0.25..1.0));
            if !admissible(&cand, &placed, cfg) {
                continue;
            }
            placed.push((cand, albedo));
            // every object, old and new, must stay at least partly visible
            let r = render(&placed, &cfg.intrinsics, cfg.width, cfg.height)?;
            let visible = (0..placed.len()).all(|j| r.owner.contains(&Some(j)));
            let exclusive = exclusive_cells(&r.owner, placed.len(), cfg.width, cfg.height, cfg.mask_cell);
            if visible && exclusive.iter().all(|&c| c >= cfg.min_exclusive_cells) {
                ok = true;
                break;
            }
            placed.pop();
        }
        if !ok {
            return Err(Error::Generation(format!(
                "seed {seed}: could not place object {} of {n} after {MAX_ATTEMPTS} attempts",
                i + 1
            )));
        }
    }
    assemble(seed, cfg, placed)
}

/// A two-car scene in which the rear car's projected center lies on the
/// front car's visible surface.
pub fn occlusion_fixture(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let k = &cfg.intrinsics;
    let dims = cfg.class.mean_dims;
    let cy = CAMERA_HEIGHT - dims[2] / 2.0;
    let at_column = |u: f64, z: f64| (u - k.px - k.skew * cy / z) * z / k.fx;
    let u0 = cfg.width as f64 / 2.0;
    let front = Box3D::new([at_column(u0, 7.0), CAMERA_HEIGHT, 7.0], dims, 0.0)?;
    let rear = Box3D::new(
        [at_column(u0 + 2.25 * cfg.stride as f64, 13.0), CAMERA_HEIGHT, 13.0],
        dims,
        std::f64::consts::FRAC_PI_2,
    )?;
    let boxes = vec![(front, [0.9, 0.3, 0.25]), (rear, [0.25, 0.45, 0.9])];
    for (i, (b, _)) in boxes.iter().enumerate() {
        if !admissible(b, &boxes[..i], cfg) {
            return Err(Error::Generation("occlusion fixture does not fit this camera".into()));
        }
    }
    let scene = assemble(0, cfg, boxes)?;
    if !scene.misaligned_pairs().contains(&(1, 0)) || !scene.objects[1].visible_mask.contains(&true) {
        return Err(Error::Generation("occlusion fixture lost its misaligned center".into()));
    }
    Ok(scene)
}

/// `n` scenes from seeds `seed, seed+1, ...`. If none of them has a
/// misaligned center, the first scene is replaced by [`occlusion_fixture`].
pub fn generate_suite(seed: u64, n: usize, cfg: &SceneConfig) -> Result<Vec<SyntheticScene>> {
    let mut scenes = (0..n as u64).map(|i| generate_scene(seed.wrapping_add(i), cfg)).collect::<Result<Vec<_>>>()?;
    if !scenes.is_empty() && scenes.iter().all(|s| s.misaligned_pairs().is_empty()) {
        scenes[0] = occlusion_fixture(cfg)?;
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exclusive_cells_count_unshared_blocks() {
        // 4x2 pixels, 2x2 blocks: block 0 owned by 0 alone, block 1 shared
        let owner = [Some(0), None, Some(0), Some(1), Some(0), Some(0), Some(1), None];
        assert_eq!(exclusive_cells(&owner, 2, 4, 2, 2), vec![1, 0]);
    }

    #[test]
    fn occlusion_heavy_keeps_exclusive_cells() {
        let cfg = SceneConfig::occlusion_heavy();
        for seed in 0..5 {
            let scene = generate_scene(seed, &cfg).unwrap();
            let owner: Vec<Option<usize>> =
                (0..cfg.width * cfg.height).map(|p| scene.objects.iter().position(|o| o.visible_mask[p])).collect();
            let counts = exclusive_cells(&owner, scene.objects.len(), cfg.width, cfg.height, cfg.mask_cell);
            assert!(counts.iter().all(|&c| c >= 1), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(42, &cfg).unwrap();
        let b = generate_scene(42, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(43, &cfg).unwrap();
        assert_ne!(a.image.data(), c.image.data());
    }

    #[test]
    fn single_object_mask_is_hull() {
        let cfg = SceneConfig { objects: (1, 1), ..SceneConfig::default() };
        for seed in 0..10 {
            let s = generate_scene(seed, &cfg).unwrap();
            assert_eq!(s.objects.len(), 1);
            assert_eq!(s.objects[0].visible_mask, s.objects[0].hull_mask);
        }
    }

    #[test]
    fn masks_follow_nearest_hull() {
        let cfg = SceneConfig::occlusion_heavy();
        for seed in 0..20 {
            let s = generate_scene(seed, &cfg).unwrap();
            for p in 0..s.width * s.height {
                let nearest = (0..s.objects.len()).filter(|&i| s.objects[i].hull_mask[p]).min_by(|&a, &b| {
                    s.objects[a].box3d.center[2].total_cmp(&s.objects[b].box3d.center[2]).then(a.cmp(&b))
                });
                for (i, o) in s.objects.iter().enumerate() {
                    assert_eq!(o.visible_mask[p], nearest == Some(i));
                }
            }
            for o in &s.objects {
                assert!(o.visible_mask.contains(&true));
            }
        }
    }

    #[test]
    fn fixture_is_misaligned() {
        let s = occlusion_fixture(&SceneConfig::default()).unwrap();
        assert!(s.misaligned_pairs().contains(&(1, 0)));
        s.targets(&TargetConfig::default()).unwrap();
    }

    #[test]
    fn suite_has_misaligned_scene() {
        let suite = generate_suite(0, 5, &SceneConfig::occlusion_heavy()).unwrap();
        assert!(suite.iter().any(|s| !s.misaligned_pairs().is_empty()));
    }

    #[test]
    fn impossible_config_is_generation_error() {
        let cfg = SceneConfig { objects: (40, 40), ..SceneConfig::default() };
        assert!(matches!(generate_scene(1, &cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn hull_of_square() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5), (0.2, 0.1), (0.0, 0.0), (1.0, 1.0)];
        let (h, n) = convex_hull(&pts);
        assert_eq!(n, 4);
        assert!(inside(&h[..n], (0.5, 0.5)));
        assert!(inside(&h[..n], (1.0, 0.5)));
        assert!(!inside(&h[..n], (1.01, 0.5)));
    }
}
