//! Brute-force references shared by the integration tests: rasterized and
//! voxelized overlaps, and an evaluator that re-matches every score cut.
#![allow(dead_code)]

use iafa_core::evaluation::{Criterion, DifficultyFilter, FrameData, GtBox, Metric, ScoredBox, IOU_THRESHOLD};
use iafa_core::geometry::{iou_3d, Box3D, Point2};
use rand::Rng;

fn inside(poly: &[Point2; 4], x: f64, z: f64) -> bool {
    // footprints are counter-clockwise
    (0..4).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        (b.x - a.x) * (z - a.y) - (b.y - a.y) * (x - a.x) >= 0.0
    })
}

fn footprint_bounds(b: &Box3D) -> (f64, f64, f64, f64) {
    let mut r = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in b.footprint() {
        r = (r.0.min(p.x), r.1.max(p.x), r.2.min(p.y), r.3.max(p.y));
    }
    r
}

/// Rasterized area of the footprint intersection. The `n × n` grid of cell
/// centers covers the overlap of the two axis-aligned footprint bounds, the
/// only region where both footprints can contain a point.
pub fn raster_intersection(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let (ba, bb) = (footprint_bounds(a), footprint_bounds(b));
    let (x0, x1, z0, z1) = (ba.0.max(bb.0), ba.1.min(bb.1), ba.2.max(bb.2), ba.3.min(bb.3));
    if x1 <= x0 || z1 <= z0 {
        return 0.0;
    }
    let (dx, dz) = ((x1 - x0) / n as f64, (z1 - z0) / n as f64);
    let (pa, pb) = (a.footprint(), b.footprint());
    let mut both = 0u64;
    for i in 0..n {
        let x = x0 + (i as f64 + 0.5) * dx;
        for j in 0..n {
            let z = z0 + (j as f64 + 0.5) * dz;
            both += u64::from(inside(&pa, x, z) && inside(&pb, x, z));
        }
    }
    both as f64 * dx * dz
}

/// BEV IoU from a `n × n` raster of the intersection; box areas are `l · w`.
pub fn raster_bev_iou(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let inter = raster_intersection(a, b, n);
    let (sa, sb) = (a.dims[0] * a.dims[1], b.dims[0] * b.dims[1]);
    inter / (sa + sb - inter)
}

/// 3D IoU from an `n³` voxel grid over the overlap of the two axis-aligned
/// bounds. Both boxes are vertical prisms, so a voxel lies in both exactly
/// when its column's center is in both footprints and its slice's center is
/// in both height ranges; the product below counts the full triple loop.
/// Box volumes are `l · w · h`.
pub fn voxel_iou_3d(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let ((at, ab), (bt, bb)) = (a.y_range(), b.y_range());
    let (y0, y1) = (at.max(bt), ab.min(bb));
    if y1 <= y0 {
        return 0.0;
    }
    let dy = (y1 - y0) / n as f64;
    let slices = (0..n)
        .filter(|&k| {
            let y = y0 + (k as f64 + 0.5) * dy;
            y >= at && y <= ab && y >= bt && y <= bb
        })
        .count();
    let inter = raster_intersection(a, b, n) * slices as f64 * dy;
    let (va, vb) = (a.dims.iter().product::<f64>(), b.dims.iter().product::<f64>());
    inter / (va + vb - inter)
}

/// Largest `|iou_3d - voxel oracle|` over `pairs` random overlapping pairs.
pub fn worst_voxel_gap(seed: u64, pairs: usize, n: usize) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let (a, b) = overlapping_pair(&mut rng);
            (iou_3d(&a, &b) - voxel_iou_3d(&a, &b, n)).abs()
        })
        .fold(0.0, f64::max)
}

pub fn random_box(rng: &mut impl Rng) -> Box3D {
    Box3D::new(
        [rng.gen_range(-15.0..15.0), 1.65, rng.gen_range(5.0..50.0)],
        [rng.gen_range(3.2..4.6), rng.gen_range(1.4..1.9), rng.gen_range(1.3..1.7)],
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

pub fn jitter(b: &Box3D, s: f64, rng: &mut impl Rng) -> Box3D {
    Box3D::new(
        [
            b.center[0] + rng.gen_range(-s..s),
            b.center[1] + rng.gen_range(-s..s) * 0.3,
            b.center[2] + rng.gen_range(-s..s),
        ],
        b.dims.map(|d| d * (1.0 + rng.gen_range(-s..s) * 0.1)),
        b.ry + rng.gen_range(-s..s) * 0.2,
    )
    .unwrap()
}

pub fn random_bbox(rng: &mut impl Rng) -> [f64; 4] {
    let (l, t) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..300.0));
    [l, t, l + rng.gen_range(10.0..200.0), t + rng.gen_range(10.0..80.0)]
}

/// Frames whose detections are a mix of jittered ground truth, duplicates
/// and clutter, with coarse scores so ties occur.
pub fn random_frames(rng: &mut impl Rng, frames: usize, gts: usize, dets: usize) -> Vec<FrameData> {
    (0..frames)
        .map(|_| {
            let gts: Vec<GtBox> = (0..gts)
                .map(|_| GtBox {
                    box3d: random_box(rng),
                    bbox: random_bbox(rng),
                    occlusion: rng.gen_range(0..=3),
                    truncation: rng.gen_range(0.0..0.6),
                })
                .collect();
            let dets = (0..dets)
                .map(|_| {
                    let box3d = if !gts.is_empty() && rng.gen_bool(0.7) {
                        jitter(&gts[rng.gen_range(0..gts.len())].box3d, rng.gen_range(0.0..0.6), rng)
                    } else {
                        random_box(rng)
                    };
                    ScoredBox {
                        box3d,
                        bbox: random_bbox(rng),
                        score: (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0,
                    }
                })
                .collect();
            let dont_care = (0..rng.gen_range(0..3)).map(|_| random_bbox(rng)).collect();
            FrameData { dets, gts, dont_care }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn dont_care_hit(b: &[f64; 4], regions: &[[f64; 4]]) -> bool {
    regions.iter().any(|r| {
        let iw = (b[2].min(r[2]) - b[0].max(r[0])).max(0.0);
        let ih = (b[3].min(r[3]) - b[1].max(r[1])).max(0.0);
        iw * ih / ((b[2] - b[0]) * (b[3] - b[1])) > 0.5
    })
}

/// Matching of the detections scoring at least `cut`, from scratch.
pub fn reference_counts(frames: &[FrameData], metric: Metric, filter: &DifficultyFilter, cut: f64) -> Counts {
    let mut c = Counts::default();
    for f in frames {
        let mut kept: Vec<(f64, usize)> =
            f.dets.iter().enumerate().filter(|(_, d)| d.score >= cut).map(|(i, d)| (d.score, i)).collect();
        kept.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let valid: Vec<bool> = f.gts.iter().map(|g| filter.accepts(g)).collect();
        let mut taken = vec![false; f.gts.len()];
        for (_, i) in kept {
            let d = &f.dets[i];
            let ious: Vec<f64> = f.gts.iter().map(|g| metric.iou(&d.box3d, &g.box3d)).collect();
            let pick = |want_valid: bool| {
                (0..f.gts.len()).filter(|&j| !taken[j] && valid[j] == want_valid && ious[j] >= IOU_THRESHOLD).fold(
                    None,
                    |best: Option<usize>, j| match best {
                        Some(b) if ious[b] >= ious[j] => Some(b),
                        _ => Some(j),
                    },
                )
            };
            if let Some(j) = pick(true) {
                taken[j] = true;
                c.tp += 1;
            } else if let Some(j) = pick(false) {
                taken[j] = true;
            } else if !dont_care_hit(&d.bbox, &f.dont_care) {
                c.fp += 1;
            }
        }
        c.fn_ += (0..f.gts.len()).filter(|&j| valid[j] && !taken[j]).count();
    }
    c
}

/// Interpolated AP straight from per-cut counts.
pub fn reference_ap(frames: &[FrameData], metric: Metric, filter: &DifficultyFilter, criterion: Criterion) -> f64 {
    let mut cuts: Vec<f64> = frames.iter().flat_map(|f| f.dets.iter().map(|d| d.score)).collect();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let points: Vec<(f64, f64)> = cuts
        .iter()
        .map(|&cut| reference_counts(frames, metric, filter, cut))
        .filter(|c| c.tp + c.fp > 0)
        .map(|c| (c.tp as f64 / (c.tp + c.fn_) as f64, c.tp as f64 / (c.tp + c.fp) as f64))
        .collect();
    let positions: Vec<f64> = match criterion {
        Criterion::Points11 => (0..=10).map(|k| k as f64 / 10.0).collect(),
        Criterion::Points40 => (1..=40).map(|k| k as f64 / 40.0).collect(),
    };
    let total: f64 =
        positions.iter().map(|&r| points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)).sum();
    total / positions.len() as f64
}

/// A random box and a second one placed near it so that overlaps of every
/// size occur.
pub fn overlapping_pair(rng: &mut impl Rng) -> (Box3D, Box3D) {
    let a = random_box(rng);
    let b = jitter(&a, rng.gen_range(0.0..3.0), rng);
    (a, b)
}
