//! Shared geometry: gravity-aligned 4-DOF poses, labelled point clouds, polygons.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Iso3 = Isometry3<f64>;

pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Gravity-aligned pose: position plus heading. Roll and pitch are observable
/// from gravity and are therefore not part of the estimated state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose4 {
    pub const IDENTITY: Pose4 = Pose4 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw }
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    /// `self ∘ other`: apply `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose4) -> Pose4 {
        let (s, c) = self.yaw.sin_cos();
        Pose4 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            z: self.z + other.z,
            yaw: wrap_angle(self.yaw + other.yaw),
        }
    }

    pub fn inverse(&self) -> Pose4 {
        let (s, c) = self.yaw.sin_cos();
        Pose4 {
            x: -(c * self.x + s * self.y),
            y: -(-s * self.x + c * self.y),
            z: -self.z,
            yaw: wrap_angle(-self.yaw),
        }
    }

    /// Relative pose of `other` seen from `self`: `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose4) -> Pose4 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(
            self.x + c * p.x - s * p.y,
            self.y + s * p.x + c * p.y,
            self.z + p.z,
        )
    }

    pub fn planar_distance(&self, other: &Pose4) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_iso3(&self) -> Iso3 {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, self.z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }

    /// Drops roll and pitch of a full pose.
    pub fn from_iso3(iso: &Iso3) -> Pose4 {
        let t = iso.translation.vector;
        let fwd = iso.rotation * Vec3::x();
        Pose4::new(t.x, t.y, t.z, fwd.y.atan2(fwd.x))
    }
}

/// Surface a simulated return came from. Real clouds carry `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Label {
    #[default]
    Unknown,
    Terrain,
    Stem(u32),
    Crown(u32),
    Patch(u32),
}

impl Label {
    pub fn is_ground(&self) -> bool {
        matches!(self, Label::Terrain)
    }

    pub fn code(&self) -> (u8, u32) {
        match *self {
            Label::Unknown => (0, 0),
            Label::Terrain => (1, 0),
            Label::Stem(id) => (2, id),
            Label::Crown(id) => (3, id),
            Label::Patch(id) => (4, id),
        }
    }

    pub fn from_code(kind: u8, id: u32) -> Label {
        match kind {
            1 => Label::Terrain,
            2 => Label::Stem(id),
            3 => Label::Crown(id),
            4 => Label::Patch(id),
            _ => Label::Unknown,
        }
    }
}

/// Point cloud with optional per-point ground-truth labels.
///
/// `labels` is either empty or exactly as long as `points`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Vec<Label>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self {
            points,
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty() && self.labels.len() == self.points.len()
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels.get(i).copied().unwrap_or_default()
    }

    pub fn push(&mut self, p: Vec3, label: Label) {
        self.points.push(p);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        let keep_labels = self.has_labels() || self.is_empty();
        if keep_labels && other.has_labels() {
            self.labels.extend_from_slice(&other.labels);
        } else {
            self.labels.clear();
        }
        self.points.extend_from_slice(&other.points);
    }

    pub fn transformed(&self, pose: &Pose4) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let labels = if self.has_labels() {
            indices.iter().map(|&i| self.labels[i]).collect()
        } else {
            Vec::new()
        };
        PointCloud { points, labels }
    }

    /// Keeps the first point that falls into each voxel of size `leaf`.
    pub fn voxel_dedup(&self, leaf: f64) -> PointCloud {
        if leaf <= 0.0 {
            return self.clone();
        }
        self.select(&voxel_keep(&self.points, leaf))
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }
}

pub fn voxel_key(p: &Vec3, leaf: f64) -> (i64, i64, i64) {
    (
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    )
}

/// Indices of the first point in each occupied voxel, in input order.
pub fn voxel_keep(points: &[Vec3], leaf: f64) -> Vec<usize> {
    let mut seen: HashMap<(i64, i64, i64), ()> = HashMap::with_capacity(points.len() / 2);
    let mut keep = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if seen.insert(voxel_key(p, leaf), ()).is_none() {
            keep.push(i);
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn grown(&self, margin: f64) -> Extent {
        Extent::new(
            self.min_x - margin,
            self.min_y - margin,
            self.max_x + margin,
            self.max_y + margin,
        )
    }
}

/// Simple polygon in the world frame, vertices in order (either orientation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    pub fn rectangle(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self::new(vec![
            [min_x, min_y],
            [max_x, min_y],
            [max_x, max_y],
            [min_x, max_y],
        ])
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// True when no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }

    /// Even-odd point-in-polygon test; boundary points count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let eps = 1e-9;
        for (a, b) in self.edges() {
            if point_segment_distance([x, y], a, b) <= eps {
                return true;
            }
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > y) != (b[1] > y) {
                let xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn rotated(&self, angle: f64, about: [f64; 2]) -> Polygon {
        Polygon::new(
            self.vertices
                .iter()
                .map(|v| rotate_about(*v, angle, about))
                .collect(),
        )
    }
}

pub fn rotate_about(v: [f64; 2], angle: f64, about: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    let dx = v[0] - about[0];
    let dy = v[1] - about[1];
    [about[0] + c * dx - s * dy, about[1] + s * dx + c * dy]
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) - 1e-12
        && p[0] <= a[0].max(b[0]) + 1e-12
        && p[1] >= a[1].min(b[1]) - 1e-12
        && p[1] <= a[1].max(b[1]) + 1e-12
}

pub fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * ab[0]).hypot(p[1] - a[1] - t * ab[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn yaw_then_forward() {
        let turn = Pose4::new(0.0, 0.0, 0.0, PI / 2.0);
        let fwd = Pose4::new(1.0, 0.0, 0.0, 0.0);
        let p = turn.compose(&fwd);
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn wrap_stays_in_range() {
        for k in -10..10 {
            let a = wrap_angle(0.3 + k as f64 * 2.0 * PI);
            assert_relative_eq!(a, 0.3, epsilon = 1e-9);
        }
        assert_relative_eq!(wrap_angle(PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
    }

    #[test]
    fn polygon_tests() {
        let r = Polygon::rectangle(0.0, 0.0, 40.0, 25.0);
        assert_relative_eq!(r.area(), 1000.0);
        assert!(r.is_simple());
        assert!(r.contains(40.0, 25.0));
        assert!(!r.contains(40.1, 5.0));
        let bowtie = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(!bowtie.is_simple());
    }

    #[test]
    fn voxel_dedup_keeps_first() {
        let pc = PointCloud::from_points(vec![
            Vec3::new(0.01, 0.01, 0.01),
            Vec3::new(0.02, 0.02, 0.02),
            Vec3::new(0.2, 0.0, 0.0),
        ]);
        let d = pc.voxel_dedup(0.05);
        assert_eq!(d.points, vec![pc.points[0], pc.points[2]]);
    }

    fn pose() -> impl Strategy<Value = Pose4> {
        (-50.0..50.0, -50.0..50.0, -5.0..5.0, -PI..PI)
            .prop_map(|(x, y, z, w)| Pose4::new(x, y, z, w))
    }

    proptest! {
        #[test]
        fn compose_inverse_is_identity(a in pose(), b in pose()) {
            let rel = a.between(&b);
            let back = a.compose(&rel);
            prop_assert!((back.x - b.x).abs() < 1e-9);
            prop_assert!((back.y - b.y).abs() < 1e-9);
            prop_assert!((back.z - b.z).abs() < 1e-9);
            prop_assert!(wrap_angle(back.yaw - b.yaw).abs() < 1e-9);
        }

        #[test]
        fn iso3_roundtrip(a in pose()) {
            let b = Pose4::from_iso3(&a.to_iso3());
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            prop_assert!(wrap_angle(a.yaw - b.yaw).abs() < 1e-9);
            let p = Vec3::new(1.0, -2.0, 0.5);
            let q1 = a.transform_point(&p);
            let q2 = a.to_iso3() * nalgebra::Point3::from(p);
            prop_assert!((q1 - q2.coords).norm() < 1e-9);
        }
    }
}
