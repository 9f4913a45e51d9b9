//! Box parameterization, pinhole projection and rotated-box overlap.
//!
//! Camera frame: x right, y down, z forward. A [`Box3D`] is anchored at the
//! center of its bottom face (the KITTI label convention); the volumetric
//! centroid sits `h/2` above it, at `y - h/2`.

mod iou;

pub use iou::{clip_convex, iou_3d, iou_bev, polygon_area, Point2};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Bottom-face center `(x, y, z)` in meters.
    pub center: [f64; 3],
    /// `(l, w, h)` in meters; `l` runs along the box x axis, `w` along its z axis.
    pub dims: [f64; 3],
    /// Yaw about the camera Y axis, radians in `(-π, π]`.
    pub ry: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], ry: f64) -> Result<Self> {
        let b = Box3D { center, dims, ry };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Geometry(format!("box dimensions must be positive, got {:?}", self.dims)));
        }
        if self.center.iter().any(|c| !c.is_finite()) || !self.ry.is_finite() {
            return Err(Error::Geometry("box fields must be finite".into()));
        }
        Ok(())
    }

    /// Builds a box from its volumetric centroid.
    pub fn from_centroid(centroid: [f64; 3], dims: [f64; 3], ry: f64) -> Self {
        Box3D { center: [centroid[0], centroid[1] + dims[2] / 2.0, centroid[2]], dims, ry }
    }

    /// Volumetric centroid.
    pub fn centroid(&self) -> [f64; 3] {
        [self.center[0], self.center[1] - self.dims[2] / 2.0, self.center[2]]
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    /// Vertical extent `(top, bottom)` in camera y (top is the smaller value).
    pub fn y_range(&self) -> (f64, f64) {
        (self.center[1] - self.dims[2], self.center[1])
    }

    /// Ground-plane `(x, z)` footprint, counter-clockwise seen from above.
    pub fn footprint(&self) -> [Point2; 4] {
        let c = corners_3d(self);
        [0, 1, 2, 3].map(|i| Point2::new(c[i][0], c[i][2]))
    }
}

/// Local `(x, z)` signs of the bottom-face corners, counter-clockwise from above
/// starting at `(+l/2, +w/2)`.
pub(crate) const FOOTPRINT_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

/// Rotates a box-frame `(x, z)` offset by yaw `ry` about Y.
#[inline]
pub fn rotate_y(ry: f64, x: f64, z: f64) -> (f64, f64) {
    let (s, c) = ry.sin_cos();
    (c * x + s * z, -s * x + c * z)
}

/// The eight corners: bottom face (`y = c_y`) then top face (`y = c_y - h`),
/// each counter-clockwise from above starting at `(+l/2, +w/2)`.
pub fn corners_3d(b: &Box3D) -> [[f64; 3]; 8] {
    let [l, w, h] = b.dims;
    let mut out = [[0.0; 3]; 8];
    for (face, dy) in [0.0, -h].into_iter().enumerate() {
        for (k, (sx, sz)) in FOOTPRINT_SIGNS.iter().enumerate() {
            let (x, z) = rotate_y(b.ry, sx * l / 2.0, sz * w / 2.0);
            out[face * 4 + k] = [b.center[0] + x, b.center[1] + dy, b.center[2] + z];
        }
    }
    out
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Pinhole intrinsics `K = [[fx, skew, px], [0, fy, py], [0, 0, 1]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, px: f64, py: f64) -> Result<Self> {
        Self::with_skew(fx, fy, px, py, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, px: f64, py: f64, skew: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![fx, fy, px, py, skew].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!("invalid intrinsics fx={fx} fy={fy}")));
        }
        Ok(CameraIntrinsics { fx, fy, px, py, skew })
    }

    pub fn identity() -> Self {
        CameraIntrinsics { fx: 1.0, fy: 1.0, px: 0.0, py: 0.0, skew: 0.0 }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, self.skew, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]]
    }

    /// Closed-form inverse of the upper-triangular `K`.
    pub fn inverse(&self) -> [[f64; 3]; 3] {
        let (fx, fy, s) = (self.fx, self.fy, self.skew);
        [
            [1.0 / fx, -s / (fx * fy), (s * self.py - self.px * fy) / (fx * fy)],
            [0.0, 1.0 / fy, -self.py / fy],
            [0.0, 0.0, 1.0],
        ]
    }

    /// `K⁻¹ · [u, v, 1]ᵀ`; the third component is exactly 1.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let k = self.inverse();
        [k[0][0] * u + k[0][1] * v + k[0][2], k[1][1] * v + k[1][2], 1.0]
    }

    /// Projects a camera-frame point; `z` must be positive.
    pub fn project(&self, p: [f64; 3]) -> Result<(f64, f64)> {
        if !(p[2] > 0.0) {
            return Err(Error::Geometry(format!("cannot project point with depth {}", p[2])));
        }
        let u = (self.fx * p[0] + self.skew * p[1]) / p[2] + self.px;
        let v = self.fy * p[1] / p[2] + self.py;
        Ok((u, v))
    }
}

/// Axis-aligned image box `[left, top, right, bottom]` enclosing the projected corners.
pub fn box2d(b: &Box3D, k: &CameraIntrinsics) -> Result<[f64; 4]> {
    let mut out = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in corners_3d(b) {
        let (u, v) = k.project(c)?;
        out[0] = out[0].min(u);
        out[1] = out[1].min(v);
        out[2] = out[2].max(u);
        out[3] = out[3].max(v);
    }
    Ok(out)
}

/// Image position of the box's volumetric centroid.
pub fn project_center(b: &Box3D, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    k.project(b.centroid())
}

/// Back-projects a feature-map cell plus sub-cell offset at a given depth to
/// the volumetric centroid. The returned `z` equals `depth`.
pub fn recover_center(
    cell: (usize, usize),
    offsets: (f64, f64),
    depth: f64,
    k: &CameraIntrinsics,
    stride: f64,
) -> Result<[f64; 3]> {
    if !(depth > 0.0) {
        return Err(Error::Geometry(format!("depth must be positive, got {depth}")));
    }
    let u = stride * (cell.0 as f64 + offsets.0);
    let v = stride * (cell.1 as f64 + offsets.1);
    let r = k.ray(u, v);
    Ok([r[0] * depth, r[1] * depth, depth])
}

/// Viewpoint-relative orientation, regressed as `(sin θ, cos θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationAngle(pub f64);

impl ObservationAngle {
    /// Decodes an unnormalized `(sin, cos)` pair; the pair is implicitly
    /// renormalized to unit length.
    pub fn from_sin_cos(s: f64, c: f64) -> Self {
        ObservationAngle(s.atan2(c))
    }

    pub fn sin_cos(self) -> (f64, f64) {
        self.0.sin_cos()
    }
}

/// Bearing of a point as seen from the camera, `atan2(x, z)`.
pub fn ray_bearing(c: [f64; 3]) -> f64 {
    c[0].atan2(c[2])
}

pub fn theta_to_ry(theta: ObservationAngle, c: [f64; 3]) -> f64 {
    wrap_angle(theta.0 + ray_bearing(c))
}

pub fn ry_to_theta(ry: f64, c: [f64; 3]) -> ObservationAngle {
    ObservationAngle(wrap_angle(ry - ray_bearing(c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_box(rng: &mut impl Rng) -> Box3D {
        Box3D::new(
            [rng.gen_range(-10.0..10.0), rng.gen_range(-1.0..2.0), rng.gen_range(3.0..40.0)],
            [rng.gen_range(0.5..5.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)],
            rng.gen_range(-PI..PI),
        )
        .unwrap()
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        wrap_angle(a - b).abs()
    }

    #[test]
    fn unit_cube_corners() {
        let b = Box3D::new([0.0; 3], [1.0; 3], 0.0).unwrap();
        let c = corners_3d(&b);
        let expected = [
            [0.5, 0.0, 0.5],
            [-0.5, 0.0, 0.5],
            [-0.5, 0.0, -0.5],
            [0.5, 0.0, -0.5],
            [0.5, -1.0, 0.5],
            [-0.5, -1.0, 0.5],
            [-0.5, -1.0, -0.5],
            [0.5, -1.0, -0.5],
        ];
        for (got, want) in c.iter().zip(expected) {
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quarter_turn_maps_first_corner() {
        let b = Box3D::new([0.0; 3], [4.0, 2.0, 1.5], PI / 2.0).unwrap();
        let c = corners_3d(&b)[0];
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!((c[2] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_corner_midpoints_meet_at_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let b = random_box(&mut rng);
            let c = corners_3d(&b);
            let centroid = b.centroid();
            // bottom k is opposite top (k+2)%4
            for k in 0..4 {
                let a = c[k];
                let o = c[4 + (k + 2) % 4];
                for ax in 0..3 {
                    assert!(((a[ax] + o[ax]) / 2.0 - centroid[ax]).abs() < 1e-12);
                }
            }
            let mean: Vec<f64> = (0..3).map(|ax| c.iter().map(|p| p[ax]).sum::<f64>() / 8.0).collect();
            for ax in 0..3 {
                assert!((mean[ax] - centroid[ax]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(700.0, 710.0, 600.0, 180.0).unwrap();
        let on_axis = Box3D::from_centroid([0.0, 0.0, 12.0], [4.0, 1.6, 1.5], 0.3);
        let (u, v) = project_center(&on_axis, &k).unwrap();
        assert_eq!((u, v), (600.0, 180.0));

        let simple = Box3D::from_centroid([1.0, 0.0, 2.0], [1.0; 3], 0.0);
        let (u, _) = project_center(&simple, &CameraIntrinsics::identity()).unwrap();
        assert_eq!(u, 0.5);

        let behind = Box3D::from_centroid([0.0, 0.0, -1.0], [1.0; 3], 0.0);
        assert!(matches!(project_center(&behind, &k), Err(Error::Geometry(_))));
    }

    #[test]
    fn recover_identity_case() {
        let c = recover_center((0, 0), (0.0, 0.0), 10.0, &CameraIntrinsics::identity(), 1.0).unwrap();
        assert_eq!(c, [0.0, 0.0, 10.0]);
        assert!(recover_center((0, 0), (0.0, 0.0), 0.0, &CameraIntrinsics::identity(), 1.0).is_err());
    }

    #[test]
    fn project_recover_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = CameraIntrinsics::with_skew(721.5377, 721.5377, 609.5593, 172.854, 0.0).unwrap();
        let stride = 4.0;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let b = random_box(&mut rng);
            let (u, v) = project_center(&b, &k).unwrap();
            let cell = ((u / stride).floor(), (v / stride).floor());
            let off = (u / stride - cell.0, v / stride - cell.1);
            if cell.0 < 0.0 || cell.1 < 0.0 {
                continue;
            }
            let c = recover_center((cell.0 as usize, cell.1 as usize), off, b.center[2], &k, stride).unwrap();
            let want = b.centroid();
            for ax in 0..3 {
                worst = worst.max((c[ax] - want[ax]).abs());
            }
            assert_eq!(c[2], b.center[2]);
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn offset_shift_closed_form() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let stride = 4.0;
        let (depth, off) = (15.0, 0.37);
        let base = recover_center((80, 60), (0.0, 0.0), depth, &k, stride).unwrap();
        let moved = recover_center((80, 60), (off, 0.0), depth, &k, stride).unwrap();
        assert!(base[0].abs() < 1e-12);
        assert!((moved[0] - base[0] - stride * off * depth / k.fx).abs() < 1e-12);
    }

    #[test]
    fn theta_conversions() {
        assert_eq!(theta_to_ry(ObservationAngle(0.7), [0.0, 1.0, 9.0]), 0.7);
        assert_eq!(theta_to_ry(ObservationAngle(0.0), [3.0, 1.0, 3.0]), PI / 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let ry = rng.gen_range(-PI..=PI);
            let c = [rng.gen_range(-20.0..20.0), 1.0, rng.gen_range(0.5..60.0)];
            let back = theta_to_ry(ry_to_theta(ry, c), c);
            assert!(angle_diff(back, ry) < 1e-12);
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_converter_roundtrip() {
        let b = Box3D::new([1.0, 1.65, 20.0], [3.9, 1.6, 1.5], 0.1).unwrap();
        let back = Box3D::from_centroid(b.centroid(), b.dims, b.ry);
        assert_eq!(back, b);
        assert_eq!(b.centroid()[1], 1.65 - 0.75);
    }

    #[test]
    fn invalid_boxes() {
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0).is_err());
        assert!(Box3D::new([f64::NAN, 0.0, 0.0], [1.0; 3], 0.0).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }
}
