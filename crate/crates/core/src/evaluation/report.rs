use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_frames, Criterion, Difficulty, FrameData, Metric, IOU_THRESHOLD};
use crate::data::{list_frames, read_calib, read_label_file, KittiLabel, CALIB_DIR, LABEL_DIR};
use crate::error::{Error, Result};
use crate::geometry::box2d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub classes: Vec<String>,
    pub metrics: Vec<Metric>,
    pub criterion: Criterion,
    pub threshold: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            classes: vec!["Car".into()],
            metrics: vec![Metric::Box3d, Metric::Bev],
            criterion: Criterion::Points11,
            threshold: IOU_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub class: String,
    pub metric: Metric,
    pub difficulty: Difficulty,
    /// Percent.
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub criterion: Criterion,
    pub rows: Vec<ApRow>,
    /// Ground-truth frames without a detection file.
    pub missing_frames: Vec<String>,
}

const TABLE_ORDER: [Difficulty; 3] = [Difficulty::Moderate, Difficulty::Easy, Difficulty::Hard];

impl EvalReport {
    pub fn get(&self, class: &str, metric: Metric, difficulty: Difficulty) -> Option<f64> {
        self.rows.iter().find(|r| r.class == class && r.metric == metric && r.difficulty == difficulty).map(|r| r.ap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,metric,difficulty,ap\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.4}", r.class, r.metric.name(), r.difficulty.name(), r.ap);
        }
        out
    }

    /// One line per class and metric; columns Moderate, Easy, Hard.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}{:<8}{:>10}{:>10}{:>10}\n", "class", "metric", "Moderate", "Easy", "Hard");
        let mut seen: Vec<(&str, Metric)> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&(r.class.as_str(), r.metric)) {
                seen.push((r.class.as_str(), r.metric));
            }
        }
        for (class, metric) in seen {
            let _ = write!(out, "{class:<12}{:<8}", metric.name());
            for d in TABLE_ORDER {
                match self.get(class, metric, d) {
                    Some(ap) => {
                        let _ = write!(out, "{ap:>10.2}");
                    }
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Detection labels of one frame with 2D boxes replaced by the projection of
/// their 3D boxes where every corner lies in front of the camera.
fn load_detections(path: &Path, calib: &crate::geometry::CameraIntrinsics) -> Result<Vec<KittiLabel>> {
    let mut dets = read_label_file(path)?;
    for d in &mut dets {
        if let Ok(bbox) = d.box3d().and_then(|b| box2d(&b, calib)) {
            d.bbox = bbox;
        }
    }
    Ok(dets)
}

/// Evaluates every frame with a label file in `gt_dir`.
///
/// `det_dir` and `gt_dir` hold KITTI label files; `calib_dir` holds one
/// calibration file per ground-truth frame. A frame without a detection
/// file counts as having no detections.
pub fn evaluate_split(det_dir: &Path, gt_dir: &Path, calib_dir: &Path, opts: &SplitOptions) -> Result<EvalReport> {
    let frames = list_frames(gt_dir)?;
    if frames.is_empty() {
        return Err(Error::Input(format!("no label files in {}", gt_dir.display())));
    }
    let mut missing = Vec::new();
    let mut loaded = Vec::with_capacity(frames.len());
    for name in &frames {
        let gts = read_label_file(&gt_dir.join(format!("{name}.txt")))?;
        let calib = read_calib(&calib_dir.join(format!("{name}.txt")))?;
        let det_path = det_dir.join(format!("{name}.txt"));
        let dets = if det_path.exists() {
            load_detections(&det_path, &calib)?
        } else {
            log::warn!("no detections for frame {name}; counting it as empty");
            missing.push(name.clone());
            Vec::new()
        };
        loaded.push((dets, gts));
    }
    let mut rows = Vec::new();
    for class in &opts.classes {
        let data = loaded.iter().map(|(d, g)| FrameData::from_labels(d, g, class)).collect::<Result<Vec<_>>>()?;
        for &metric in &opts.metrics {
            for difficulty in Difficulty::ALL {
                let curve = evaluate_frames(&data, metric, opts.threshold, &difficulty.filter());
                rows.push(ApRow { class: class.clone(), metric, difficulty, ap: 100.0 * opts.criterion.ap(&curve) });
            }
        }
    }
    Ok(EvalReport { criterion: opts.criterion, rows, missing_frames: missing })
}

/// `root/label_2` and `root/calib` of a dataset split.
pub fn split_dirs(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    (root.join(LABEL_DIR), root.join(CALIB_DIR))
}
