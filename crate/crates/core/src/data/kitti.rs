//! KITTI object label and calibration text formats.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraIntrinsics};

pub const DONT_CARE: &str = "DontCare";

#[derive(Clone, Debug, PartialEq)]
pub struct KittiLabel {
    pub class: String,
    pub truncation: f64,
    /// 0 visible, 1 partly, 2 largely occluded, 3 unknown; -1 in detection files.
    pub occlusion: i32,
    /// Observation angle.
    pub alpha: f64,
    /// `[left, top, right, bottom]` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in meters, in file order.
    pub dims_hwl: [f64; 3],
    /// Bottom-face center in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.class == DONT_CARE
    }

    pub fn height_px(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn box3d(&self) -> Result<Box3D> {
        let [h, w, l] = self.dims_hwl;
        Box3D::new(self.location, [l, w, h], self.rotation_y)
    }

    /// A detection-format row (truncation and occlusion set to -1).
    pub fn detection(class: &str, b: &Box3D, bbox: [f64; 4], alpha: f64, score: f64) -> Self {
        let [l, w, h] = b.dims;
        KittiLabel {
            class: class.to_string(),
            truncation: -1.0,
            occlusion: -1,
            alpha,
            bbox,
            dims_hwl: [h, w, l],
            location: b.center,
            rotation_y: b.ry,
            score: Some(score),
        }
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<KittiLabel> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    if tok.len() != 15 && tok.len() != 16 {
        return Err(Error::Parse { line: lineno, msg: format!("expected 15 or 16 fields, found {}", tok.len()) });
    }
    let num = |i: usize| -> Result<f64> {
        tok[i]
            .parse::<f64>()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("field {} is not a number: `{}`", i + 1, tok[i]) })
    };
    let occ = num(2)?;
    if occ.fract() != 0.0 || !(-1.0..=3.0).contains(&occ) {
        return Err(Error::Parse { line: lineno, msg: format!("occlusion level `{}` not in -1..=3", tok[2]) });
    }
    let label = KittiLabel {
        class: tok[0].to_string(),
        truncation: num(1)?,
        occlusion: occ as i32,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        dims_hwl: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if tok.len() == 16 { Some(num(15)?) } else { None },
    };
    if !(label.bbox[2] > label.bbox[0] && label.bbox[3] > label.bbox[1]) {
        return Err(Error::Parse { line: lineno, msg: format!("degenerate 2D box {:?}", label.bbox) });
    }
    if !label.is_dont_care() && label.dims_hwl.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Parse { line: lineno, msg: format!("non-positive dimensions {:?}", label.dims_hwl) });
    }
    Ok(label)
}

/// One label per non-empty line; line numbers in errors are 1-based.
pub fn parse_label_file(text: &str) -> Result<Vec<KittiLabel>> {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| parse_line(l, i + 1)).collect()
}

/// Writes labels with two decimals per float and four for the score.
pub fn write_label_file(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let _ = write!(
            out,
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            l.class,
            l.truncation,
            l.occlusion,
            l.alpha,
            l.bbox[0],
            l.bbox[1],
            l.bbox[2],
            l.bbox[3],
            l.dims_hwl[0],
            l.dims_hwl[1],
            l.dims_hwl[2],
            l.location[0],
            l.location[1],
            l.location[2],
            l.rotation_y
        );
        if let Some(s) = l.score {
            let _ = write!(out, " {s:.4}");
        }
        out.push('\n');
    }
    out
}

/// Reads `K` from the left 3×3 block of the `P2:` row. The translation
/// column is ignored.
pub fn parse_calib(text: &str) -> Result<CameraIntrinsics> {
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.trim_start().strip_prefix("P2:") else {
            continue;
        };
        let vals = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: i + 1, msg: format!("P2: {e}") })?;
        if vals.len() != 12 {
            return Err(Error::Parse { line: i + 1, msg: format!("P2 has {} values, expected 12", vals.len()) });
        }
        return CameraIntrinsics::with_skew(vals[0], vals[5], vals[2], vals[6], vals[1])
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() });
    }
    Err(Error::Parse { line: 0, msg: "no P2 row".into() })
}

/// A devkit-style calibration file carrying `k` as P0..P3 (zero translation).
pub fn write_calib(k: &CameraIntrinsics) -> String {
    let m = k.matrix();
    let p = format!(
        "{:e} {:e} {:e} 0 {:e} {:e} {:e} 0 {:e} {:e} {:e} 0",
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]
    );
    let mut out = String::new();
    for cam in 0..4 {
        let _ = writeln!(out, "P{cam}: {p}");
    }
    out.push_str("R0_rect: 1 0 0 0 1 0 0 0 1\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    #[test]
    fn empty_file() {
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_label_file("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn roundtrip() {
        let labels = parse_label_file(CAR).unwrap();
        assert_eq!(labels.len(), 1);
        let l = &labels[0];
        assert_eq!(l.class, "Car");
        assert_eq!(l.dims_hwl, [1.65, 1.67, 3.64]);
        assert_eq!(l.location, [-0.65, 1.71, 46.70]);
        let text = write_label_file(&labels);
        assert_eq!(text.trim_end(), CAR);
        assert_eq!(parse_label_file(&text).unwrap(), labels);
        let b = l.box3d().unwrap();
        assert_eq!(b.dims, [3.64, 1.67, 1.65]);
    }

    #[test]
    fn score_and_dont_care() {
        let text =
            format!("{CAR} 0.87654\nDontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n");
        let labels = parse_label_file(&text).unwrap();
        assert_eq!(labels[0].score, Some(0.87654));
        assert!(labels[1].is_dont_care());
        assert!(write_label_file(&labels).lines().next().unwrap().ends_with(" 0.8765"));
    }

    #[test]
    fn bad_rows() {
        let short = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70";
        match parse_label_file(&format!("{CAR}\n{short}")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_label_file(&CAR.replace("46.70", "far")).is_err());
    }

    #[test]
    fn calib() {
        let text = "P0: 7.215377e+02 0 6.095593e+02 0 0 7.215377e+02 1.728540e+02 0 0 0 1 0\n\
                    P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n";
        let k = parse_calib(text).unwrap();
        assert_eq!((k.fx, k.fy, k.px, k.py), (721.5377, 721.5377, 609.5593, 172.854));
        let id = parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert_eq!(id, CameraIntrinsics::identity());
        assert!(parse_calib("P2: 1 0 0").is_err());
        assert!(parse_calib("P1: 1 0 0 0 0 1 0 0 0 0 1 0").is_err());
        let back = parse_calib(&write_calib(&k)).unwrap();
        assert_eq!(back, k);
    }
}
