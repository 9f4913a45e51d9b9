use super::Box3D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

#[inline]
fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Sutherland–Hodgman: clips `subject` by the convex, counter-clockwise `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_side = cross(a, b, cur);
            let prev_side = cross(a, b, prev);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(prev, cur, prev_side, cur_side));
            }
        }
    }
    output
}

/// Point where segment `p→q` crosses the clip line, given signed distances.
fn intersect(p: Point2, q: Point2, dp: f64, dq: f64) -> Point2 {
    let t = dp / (dp - dq);
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

fn ccw(mut poly: [Point2; 4]) -> [Point2; 4] {
    if polygon_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Area of the ground-plane footprint intersection.
pub(crate) fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let pa = ccw(a.footprint());
    let pb = ccw(b.footprint());
    polygon_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// Rotated-rectangle IoU of the two footprints on the `(x, z)` ground plane.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    let area_a = a.dims[0] * a.dims[1];
    let area_b = b.dims[0] * b.dims[1];
    ratio(inter, area_a + area_b - inter)
}

/// Relative vertical overlap treated as touching.
const VERTICAL_EPS: f64 = 1e-12;

/// Volume IoU: footprint intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a_top, a_bottom) = a.y_range();
    let (b_top, b_bottom) = b.y_range();
    let vertical = (a_bottom.min(b_bottom) - a_top.max(b_top)).max(0.0);
    // stacked boxes touch at rounding error, not a real sliver
    if vertical <= VERTICAL_EPS * (a.dims[2] + b.dims[2]) {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * vertical;
    ratio(inter, a.volume() + b.volume() - inter)
}

fn ratio(inter: f64, union: f64) -> f64 {
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
