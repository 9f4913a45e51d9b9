//! KITTI-style matching and interpolated average precision.
//!
//! Detections of one frame are matched greedily in descending score order.
//! Because the pass is greedy, the outcome of every detection is fixed by
//! the detections ranked above it, so one pass per frame yields the counts
//! at every score cut.

mod report;

pub use report::{evaluate_split, split_dirs, ApRow, EvalReport, SplitOptions};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::KittiLabel;
use crate::error::Result;
use crate::geometry::{iou_3d, iou_bev, Box3D};

pub const IOU_THRESHOLD: f64 = 0.7;
/// Fraction of a detection's 2D box that must lie inside a DontCare region
/// for an unmatched detection to be ignored.
pub const DONT_CARE_OVERLAP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }

    pub fn filter(self) -> DifficultyFilter {
        match self {
            Difficulty::Easy => DifficultyFilter::new(40.0, 0, 0.15),
            Difficulty::Moderate => DifficultyFilter::new(25.0, 1, 0.30),
            Difficulty::Hard => DifficultyFilter::new(25.0, 2, 0.50),
        }
    }
}

/// Ground truth passing all three bounds counts; the rest become ignore regions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyFilter {
    pub min_height: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

impl DifficultyFilter {
    pub fn new(min_height: f64, max_occlusion: i32, max_truncation: f64) -> Self {
        DifficultyFilter { min_height, max_occlusion, max_truncation }
    }

    /// Accepts everything.
    pub fn all() -> Self {
        DifficultyFilter::new(f64::NEG_INFINITY, i32::MAX, f64::INFINITY)
    }

    pub fn accepts(&self, gt: &GtBox) -> bool {
        gt.height() >= self.min_height && gt.occlusion <= self.max_occlusion && gt.truncation <= self.max_truncation
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[serde(rename = "3d")]
    Box3d,
    Bev,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Box3d => "3d",
            Metric::Bev => "bev",
        }
    }

    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Metric::Box3d => iou_3d(a, b),
            Metric::Bev => iou_bev(a, b),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(Metric::Box3d),
            "bev" => Ok(Metric::Bev),
            _ => Err(crate::Error::Config(format!("unknown metric `{s}` (expected 3d or bev)"))),
        }
    }
}

/// Recall sampling of the interpolated precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// `{0, 0.1, ..., 1}`
    Points11,
    /// `{1/40, 2/40, ..., 1}`
    Points40,
}

impl Criterion {
    /// Recall positions as `(numerator, denominator)`.
    pub fn positions(self) -> impl Iterator<Item = (usize, usize)> {
        let (range, den) = match self {
            Criterion::Points11 => (0..=10, 10),
            Criterion::Points40 => (1..=40, 40),
        };
        range.map(move |k| (k, den))
    }

    pub fn ap(self, curve: &PrCurve) -> f64 {
        match self {
            Criterion::Points11 => ap_11(curve),
            Criterion::Points40 => ap_40(curve),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "11" => Ok(Criterion::Points11),
            "40" => Ok(Criterion::Points40),
            _ => Err(crate::Error::Config(format!("unknown criterion `{s}` (expected 11 or 40)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub box3d: Box3D,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtBox {
    pub box3d: Box3D,
    pub bbox: [f64; 4],
    pub occlusion: i32,
    pub truncation: f64,
}

impl GtBox {
    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

/// Everything the matcher needs from one frame, restricted to one class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameData {
    pub dets: Vec<ScoredBox>,
    pub gts: Vec<GtBox>,
    pub dont_care: Vec<[f64; 4]>,
}

impl FrameData {
    /// Keeps detections and ground truth of `class`; DontCare rows become
    /// ignore regions. Detections without a score count as score 1.
    pub fn from_labels(dets: &[KittiLabel], gts: &[KittiLabel], class: &str) -> Result<Self> {
        let mut frame = FrameData::default();
        for d in dets.iter().filter(|d| d.class == class) {
            frame.dets.push(ScoredBox { box3d: d.box3d()?, bbox: d.bbox, score: d.score.unwrap_or(1.0) });
        }
        for g in gts {
            if g.is_dont_care() {
                frame.dont_care.push(g.bbox);
            } else if g.class == class {
                frame.gts.push(GtBox {
                    box3d: g.box3d()?,
                    bbox: g.bbox,
                    occlusion: g.occlusion,
                    truncation: g.truncation,
                });
            }
        }
        Ok(frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    TruePositive {
        gt: usize,
        iou: f64,
    },
    FalsePositive,
    /// Matched an ignored ground truth or sits in a DontCare region.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatch {
    /// `(detection index, score, outcome)` in processing order.
    pub outcomes: Vec<(usize, f64, Outcome)>,
    /// Ground truth that passed the difficulty filter.
    pub valid_gts: usize,
}

/// Descending score, then ascending index.
pub fn score_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Intersection area over the area of `inner`.
pub fn overlap_fraction(inner: &[f64; 4], region: &[f64; 4]) -> f64 {
    let w = (inner[2].min(region[2]) - inner[0].max(region[0])).max(0.0);
    let h = (inner[3].min(region[3]) - inner[1].max(region[1])).max(0.0);
    let area = (inner[2] - inner[0]) * (inner[3] - inner[1]);
    if area > 0.0 {
        w * h / area
    } else {
        0.0
    }
}

/// Greedy matching of one frame.
///
/// Each detection takes the highest-IoU unused valid ground truth at or above
/// `threshold`. Failing that, an unused ignored ground truth at or above the
/// threshold absorbs it. A still unmatched detection is ignored when it lies
/// mostly inside a DontCare region and is a false positive otherwise.
pub fn match_frame(frame: &FrameData, metric: Metric, threshold: f64, filter: &DifficultyFilter) -> FrameMatch {
    let valid: Vec<bool> = frame.gts.iter().map(|g| filter.accepts(g)).collect();
    let mut used = vec![false; frame.gts.len()];
    let mut outcomes = Vec::with_capacity(frame.dets.len());
    for i in score_order(&frame.dets) {
        let det = &frame.dets[i];
        let mut best: [Option<(usize, f64)>; 2] = [None, None];
        for (j, gt) in frame.gts.iter().enumerate() {
            if used[j] {
                continue;
            }
            let iou = metric.iou(&det.box3d, &gt.box3d);
            let slot = &mut best[usize::from(!valid[j])];
            if iou >= threshold && slot.is_none_or(|(_, b)| iou > b) {
                *slot = Some((j, iou));
            }
        }
        let outcome = match best {
            [Some((j, iou)), _] => {
                used[j] = true;
                Outcome::TruePositive { gt: j, iou }
            }
            [None, Some((j, _))] => {
                used[j] = true;
                Outcome::Ignored
            }
            [None, None] if frame.dont_care.iter().any(|r| overlap_fraction(&det.bbox, r) > DONT_CARE_OVERLAP) => {
                Outcome::Ignored
            }
            [None, None] => Outcome::FalsePositive,
        };
        outcomes.push((i, det.score, outcome));
    }
    FrameMatch { outcomes, valid_gts: valid.iter().filter(|&&v| v).count() }
}

/// One point per distinct detection score, highest score first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub num_gt: usize,
    /// `(frame, detection, ground truth, iou)` of every true positive.
    pub matches: Vec<(usize, usize, usize, f64)>,
}

impl PrCurve {
    pub fn from_matches(frames: &[FrameMatch]) -> PrCurve {
        let mut scored: Vec<(f64, bool)> = Vec::new();
        let mut matches = Vec::new();
        for (f, m) in frames.iter().enumerate() {
            for &(det, score, outcome) in &m.outcomes {
                match outcome {
                    Outcome::TruePositive { gt, iou } => {
                        scored.push((score, true));
                        matches.push((f, det, gt, iou));
                    }
                    Outcome::FalsePositive => scored.push((score, false)),
                    Outcome::Ignored => {}
                }
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let num_gt = frames.iter().map(|m| m.valid_gts).sum();
        let mut curve = PrCurve { num_gt, matches, ..PrCurve::default() };
        let (mut tp, mut fp) = (0, 0);
        for (k, &(score, hit)) in scored.iter().enumerate() {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            if scored.get(k + 1).is_some_and(|next| next.0 == score) {
                continue;
            }
            curve.thresholds.push(score);
            curve.tp.push(tp);
            curve.fp.push(fp);
            curve.precision.push(tp as f64 / (tp + fp) as f64);
            curve.recall.push(if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 });
        }
        curve
    }

    /// Largest precision among points with recall at least `num / den`;
    /// zero when no point reaches it. Compared in integers so recall
    /// positions are hit exactly.
    pub fn interpolated_precision(&self, num: usize, den: usize) -> f64 {
        if self.num_gt == 0 {
            return 0.0;
        }
        self.tp
            .iter()
            .zip(&self.precision)
            .filter(|(&tp, _)| tp * den >= num * self.num_gt)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max)
    }

    fn average(&self, criterion: Criterion) -> f64 {
        let (sum, n) =
            criterion.positions().fold((0.0, 0usize), |(s, n), (k, d)| (s + self.interpolated_precision(k, d), n + 1));
        sum / n as f64
    }
}

pub fn ap_11(curve: &PrCurve) -> f64 {
    curve.average(Criterion::Points11)
}

pub fn ap_40(curve: &PrCurve) -> f64 {
    curve.average(Criterion::Points40)
}

/// Matches every frame in parallel and accumulates one curve.
pub fn evaluate_frames(frames: &[FrameData], metric: Metric, threshold: f64, filter: &DifficultyFilter) -> PrCurve {
    let matches: Vec<FrameMatch> = frames.par_iter().map(|f| match_frame(f, metric, threshold, filter)).collect();
    PrCurve::from_matches(&matches)
}
