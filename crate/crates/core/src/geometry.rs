//! Oriented 3D boxes, point clouds and the scale transform.
//!
//! Coordinates are sensor-centred with `z` up. A [`ScaleTriple`] scales a
//! whole cloud about the sensor origin; [`rescale_box`] maps detections made
//! on a scaled cloud back to the original frame.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clipping/degeneracy tolerance in meters.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// Per-axis scale factors applied to a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTriple {
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl ScaleTriple {
    pub const IDENTITY: ScaleTriple = ScaleTriple {
        wx: 1.0,
        wy: 1.0,
        wz: 1.0,
    };

    pub fn new(wx: f64, wy: f64, wz: f64) -> Result<Self> {
        let w = Self { wx, wy, wz };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.wx, self.wy, self.wz]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "scale components must be finite and positive, got ({}, {}, {})",
                self.wx, self.wy, self.wz
            )))
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            wx: 1.0 / self.wx,
            wy: 1.0 / self.wy,
            wz: 1.0 / self.wz,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wx, self.wy, self.wz]
    }

    /// Lexicographic order on (wx, wy, wz).
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        self.wx
            .total_cmp(&other.wx)
            .then(self.wy.total_cmp(&other.wy))
            .then(self.wz.total_cmp(&other.wz))
    }
}

impl std::fmt::Display for ScaleTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.wx, self.wy, self.wz)
    }
}

impl std::str::FromStr for ScaleTriple {
    type Err = Error;

    /// Parses `wx,wy,wz`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("bad scale '{s}': {e}")))?;
        match parts.as_slice() {
            [x, y, z] => ScaleTriple::new(*x, *y, *z),
            _ => Err(Error::InvalidInput(format!(
                "scale '{s}' must have three comma-separated components"
            ))),
        }
    }
}

/// Normalizes an angle into [-π, π).
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π
    if r >= PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Oriented 3D bounding box. `length` runs along the heading, `width` across
/// it in the ground plane, `height` is vertical. `(cx, cy, cz)` is the
/// geometric centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub score: f64,
}

impl Box3D {
    /// Builds a validated box; yaw is normalized.
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64, score: f64) -> Result<Self> {
        let b = Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length: dims[0],
            width: dims[1],
            height: dims[2],
            yaw: normalize_angle(yaw),
            score,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.yaw,
            self.score,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!("non-finite box field: {self:?}")));
        }
        if self.length <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "box dimensions must be positive: {self:?}"
            )));
        }
        if !(-PI..PI).contains(&self.yaw) {
            return Err(Error::InvalidInput(format!(
                "yaw {} outside [-pi, pi)",
                self.yaw
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    /// Ground-plane distance of the centre from the sensor.
    pub fn range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| [self.cx + c * lx - s * ly, self.cy + s * lx + c * ly])
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.cx == other.cx
            && self.cy == other.cy
            && self.cz == other.cz
            && self.length == other.length
            && self.width == other.width
            && self.height == other.height
            && self.yaw == other.yaw
    }

    fn geometry_cmp(&self, other: &Self) -> Ordering {
        let a = [self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw];
        let b = [other.cx, other.cy, other.cz, other.length, other.width, other.height, other.yaw];
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Multiplies every point by `w` componentwise. Intensity and order are kept.
pub fn scale_cloud(cloud: &[Point3], w: &ScaleTriple) -> Result<Vec<Point3>> {
    w.validate()?;
    Ok(cloud
        .iter()
        .map(|p| Point3 {
            x: p.x * w.wx,
            y: p.y * w.wy,
            z: p.z * w.wz,
            intensity: p.intensity,
        })
        .collect())
}

/// Forward transform of a box into a cloud scaled by `w`.
///
/// Dimensions are scaled per world axis regardless of yaw, which is exact
/// only for axis-aligned headings or isotropic ground-plane scales.
pub fn scale_box(b: &Box3D, w: &ScaleTriple) -> Box3D {
    Box3D {
        cx: b.cx * w.wx,
        cy: b.cy * w.wy,
        cz: b.cz * w.wz,
        length: b.length * w.wx,
        width: b.width * w.wy,
        height: b.height * w.wz,
        ..*b
    }
}

/// Maps a detection made on a cloud scaled by `w` back to the original frame
/// by dividing position and dimensions by `w`. Yaw and score are unchanged.
pub fn rescale_box(b: &Box3D, w: &ScaleTriple) -> Box3D {
    Box3D {
        cx: b.cx / w.wx,
        cy: b.cy / w.wy,
        cz: b.cz / w.wz,
        length: b.length / w.wx,
        width: b.width / w.wy,
        height: b.height / w.wz,
        ..*b
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let p = poly[i];
            let q = poly[(i + 1) % n];
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    twice.abs() / 2.0
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom.abs() < GEOM_EPS * GEOM_EPS {
        return None;
    }
    let t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom;
    Some([p[0] + t * d1[0], p[1] + t * d1[1]])
}

/// Sutherland–Hodgman clip of `subject` by the convex CCW polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge_len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        // signed distance of p from edge a->b, positive on the inner side
        let inside = |p: [f64; 2]| cross(a, b, p) / edge_len >= -GEOM_EPS;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.extend(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    output.extend(line_intersection(prev, cur, a, b));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

/// Area of the intersection of the two yaw-rotated footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let ra = a.length.hypot(a.width) / 2.0;
    let rb = b.length.hypot(b.width) / 2.0;
    if dx.hypot(dy) > ra + rb {
        return 0.0;
    }
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    if poly.len() < 3 {
        return 0.0;
    }
    let area = shoelace(&poly);
    if area < GEOM_EPS {
        0.0
    } else {
        area
    }
}

fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let top = (a.cz + a.height / 2.0).min(b.cz + b.height / 2.0);
    let bottom = (a.cz - a.height / 2.0).max(b.cz - b.height / 2.0);
    (top - bottom).max(0.0)
}

/// Intersection volume of two oriented boxes.
pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let h = vertical_overlap(a, b);
    if h <= 0.0 {
        return 0.0;
    }
    bev_intersection_area(a, b) * h
}

/// Rotated 3D intersection-over-union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a.same_geometry(b) {
        return 1.0;
    }
    // Fixed argument order makes the result bit-symmetric.
    let (a, b) = match a.geometry_cmp(b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Deterministic NMS ordering: score descending, then centre ascending.
pub fn nms_order(a: &Box3D, b: &Box3D) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.cx.total_cmp(&b.cx))
        .then(a.cy.total_cmp(&b.cy))
        .then(a.cz.total_cmp(&b.cz))
}

/// Greedy non-maximum suppression; drops every box with IoU >= `iou_threshold`
/// against an already kept box. Output is in descending score order.
pub fn nms_3d(boxes: &[Box3D], iou_threshold: f64) -> Result<Vec<Box3D>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::InvalidInput(format!(
            "NMS IoU threshold {iou_threshold} outside [0, 1]"
        )));
    }
    let mut sorted = boxes.to_vec();
    sorted.sort_by(nms_order);
    let mut kept: Vec<Box3D> = Vec::new();
    for b in sorted {
        if kept.iter().all(|k| iou_3d(k, &b) < iou_threshold) {
            kept.push(b);
        }
    }
    Ok(kept)
}

/// True when the ground-plane bearing of (x, y) lies within a horizontal
/// field of view of `fov_deg` centred on +x.
pub fn in_fov(x: f64, y: f64, fov_deg: f64) -> bool {
    if fov_deg >= 360.0 {
        return true;
    }
    y.atan2(x).abs() <= fov_deg.to_radians() / 2.0
}

/// Keeps the points inside a horizontal field of view centred on +x.
pub fn fov_filter(cloud: &[Point3], fov_deg: f64) -> Vec<Point3> {
    cloud
        .iter()
        .filter(|p| in_fov(p.x, p.y, fov_deg))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_cube(cx: f64, yaw: f64) -> Box3D {
        Box3D::new([cx, 0.0, 0.0], [1.0, 1.0, 1.0], yaw, 1.0).unwrap()
    }

    #[test]
    fn scale_cloud_componentwise() {
        let w = ScaleTriple::new(1.3, 1.3, 1.15).unwrap();
        let out = scale_cloud(&[Point3::new(10.0, -2.0, 1.0, 0.4)], &w).unwrap();
        assert_abs_diff_eq!(out[0].x, 13.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].y, -2.6, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].z, 1.15, epsilon = 1e-12);
        assert_eq!(out[0].intensity, 0.4);
    }

    #[test]
    fn scale_cloud_identity() {
        let cloud = vec![Point3::new(1.5, -3.0, 0.2, 0.9), Point3::new(0.0, 7.0, -1.0, 0.0)];
        assert_eq!(scale_cloud(&cloud, &ScaleTriple::IDENTITY).unwrap(), cloud);
    }

    #[test]
    fn invalid_scale_rejected() {
        assert!(ScaleTriple::new(0.0, 1.0, 1.0).is_err());
        assert!(ScaleTriple::new(1.0, -1.0, 1.0).is_err());
        let bad = ScaleTriple {
            wx: 1.0,
            wy: 1.0,
            wz: 0.0,
        };
        assert!(scale_cloud(&[Point3::new(1.0, 1.0, 1.0, 0.0)], &bad).is_err());
    }

    #[test]
    fn rescale_box_inverts_scaling() {
        let w = ScaleTriple::new(1.3, 1.3, 1.15).unwrap();
        let b = Box3D::new([13.0, -2.6, 1.15], [5.2, 2.6, 1.725], 0.0, 0.7).unwrap();
        let r = rescale_box(&b, &w);
        for (got, want) in r.center().iter().zip([10.0, -2.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        for (got, want) in r.dims().iter().zip([4.0, 2.0, 1.5]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_eq!(r.yaw, 0.0);
        assert_eq!(r.score, 0.7);
        assert_eq!(rescale_box(&b, &ScaleTriple::IDENTITY), b);
    }

    #[test]
    fn analytic_iou_cases() {
        let a = unit_cube(0.0, 0.0);
        assert_eq!(iou_3d(&a, &a), 1.0);

        let b = unit_cube(0.5, 0.0);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() <= 1e-12);

        let c = unit_cube(0.0, PI / 4.0);
        let area = 2.0 * (2f64.sqrt() - 1.0);
        assert!((bev_intersection_area(&a, &c) - area).abs() <= 1e-12);
        assert!((iou_3d(&a, &c) - area / (2.0 - area)).abs() <= 1e-12);
    }

    #[test]
    fn disjoint_and_vertically_separated() {
        let a = unit_cube(0.0, 0.3);
        assert_eq!(iou_3d(&a, &unit_cube(5.0, 0.0)), 0.0);
        let mut up = a;
        up.cz = 1.0;
        assert_eq!(iou_3d(&a, &up), 0.0);
    }

    #[test]
    fn nms_suppresses_overlap() {
        let a = Box3D::new([0.0, 0.0, 0.0], [2.0, 1.0, 1.0], 0.0, 0.9).unwrap();
        // offset 2/3 along length: overlap 4/3 of 2 -> IoU = (2/3)/(4/3) = 0.5
        let b = Box3D::new([2.0 / 3.0, 0.0, 0.0], [2.0, 1.0, 1.0], 0.0, 0.8).unwrap();
        assert_abs_diff_eq!(iou_3d(&a, &b), 0.5, epsilon = 1e-12);
        assert_eq!(nms_3d(&[b, a], 0.1).unwrap(), vec![a]);
    }

    #[test]
    fn nms_keeps_disjoint_and_empty() {
        let a = unit_cube(0.0, 0.0);
        let mut b = unit_cube(10.0, 0.0);
        b.score = 0.5;
        assert_eq!(nms_3d(&[b, a], 0.1).unwrap(), vec![a, b]);
        assert!(nms_3d(&[], 0.1).unwrap().is_empty());
        assert!(nms_3d(&[a], 1.5).is_err());
    }

    #[test]
    fn nms_tie_break_prefers_smaller_center() {
        let a = Box3D::new([0.2, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 0.5).unwrap();
        let b = Box3D::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 0.5).unwrap();
        assert_eq!(nms_3d(&[a, b], 0.1).unwrap(), vec![b]);
        assert_eq!(nms_3d(&[b, a], 0.1).unwrap(), vec![b]);
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-5.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fov_filter_default_cone() {
        let cloud = vec![
            Point3::new(10.0, 0.0, 0.0, 0.0),
            Point3::new(10.0, 9.0, 0.0, 0.0),
            Point3::new(10.0, 11.0, 0.0, 0.0),
            Point3::new(-10.0, 0.0, 0.0, 0.0),
        ];
        assert_eq!(fov_filter(&cloud, 90.0).len(), 2);
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            (-10.0..10.0f64, -10.0..10.0f64, -2.0..2.0f64),
            (0.5..6.0f64, 0.5..3.0f64, 0.5..2.5f64),
            -PI..PI,
            0.0..=1.0f64,
        )
            .prop_map(|((x, y, z), (l, w, h), yaw, s)| {
                Box3D::new([x, y, z], [l, w, h], yaw, s).unwrap()
            })
    }

    fn arb_scale() -> impl Strategy<Value = ScaleTriple> {
        (0.5..1.5f64, 0.5..1.5f64, 0.5..1.5f64).prop_map(|(x, y, z)| ScaleTriple::new(x, y, z).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou_3d(&a, &b);
            prop_assert_eq!(ab, iou_3d(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou_3d(&a, &a), 1.0);
        }

        #[test]
        fn scale_round_trips(a in arb_box(), w in arb_scale(),
                             px in -50.0..50.0f64, py in -50.0..50.0f64, pz in -3.0..3.0f64) {
            let back = rescale_box(&scale_box(&a, &w), &w);
            for (x, y) in back.center().iter().chain(back.dims().iter())
                .zip(a.center().iter().chain(a.dims().iter())) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            let twice = rescale_box(&rescale_box(&a, &w), &w.inverse());
            prop_assert!((twice.cx - a.cx).abs() <= 1e-9 && (twice.length - a.length).abs() <= 1e-9);
            let rel = (rescale_box(&a, &w).volume() - a.volume() / (w.wx * w.wy * w.wz)).abs() / a.volume();
            prop_assert!(rel <= 1e-9);

            let p = Point3::new(px, py, pz, 0.3);
            let q = scale_cloud(&scale_cloud(&[p], &w).unwrap(), &w.inverse()).unwrap()[0];
            prop_assert!((q.x - p.x).abs() <= 1e-9 && (q.y - p.y).abs() <= 1e-9 && (q.z - p.z).abs() <= 1e-9);
        }

        #[test]
        fn nms_output_is_pairwise_separated(boxes in proptest::collection::vec(arb_box(), 0..12),
                                            thr in 0.05..0.9f64) {
            let kept = nms_3d(&boxes, thr).unwrap();
            for (i, a) in kept.iter().enumerate() {
                prop_assert!(boxes.contains(a));
                for b in &kept[i + 1..] {
                    prop_assert!(iou_3d(a, b) < thr);
                    prop_assert!(a.score >= b.score);
                }
            }
        }
    }
}
