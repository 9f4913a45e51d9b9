//! Bird's-eye view drawing: ground truth solid, detections dashed.

use std::fmt::Write as _;

use iafa_core::geometry::Box3D;

const PX_PER_M: f64 = 12.0;
const MARGIN_M: f64 = 2.0;

pub fn bev_svg(gt: &[Box3D], det: &[(Box3D, f64)]) -> String {
    let pts: Vec<_> = gt.iter().chain(det.iter().map(|(b, _)| b)).flat_map(|b| b.footprint()).collect();
    let (mut x0, mut x1, mut z1) = (-10.0f64, 10.0f64, 20.0f64);
    for p in &pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        z1 = z1.max(p.y);
    }
    let (x0, x1, z0, z1) = (x0 - MARGIN_M, x1 + MARGIN_M, 0.0, z1 + MARGIN_M);
    let (w, h) = ((x1 - x0) * PX_PER_M, (z1 - z0) * PX_PER_M);
    // camera at the bottom, depth growing upward
    let map = |x: f64, z: f64| ((x - x0) * PX_PER_M, (z1 - z) * PX_PER_M);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (cx, cy) = map(0.0, 0.0);
    let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="black"/>"#);
    let poly = |b: &Box3D| -> String {
        b.footprint()
            .iter()
            .map(|p| {
                let (u, v) = map(p.x, p.y);
                format!("{u:.2},{v:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (i, b) in gt.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="none" stroke="seagreen" stroke-width="2"><title>gt {i}</title></polygon>"#,
            poly(b)
        );
    }
    for (i, (b, score)) in det.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="none" stroke="crimson" stroke-width="2" stroke-dasharray="6 4"><title>det {i} score {score:.3}</title></polygon>"#,
            poly(b)
        );
    }
    out.push_str("</svg>\n");
    out
}
