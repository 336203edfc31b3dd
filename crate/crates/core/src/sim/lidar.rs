//! Ray-cast LiDAR against the ground-truth world.

use nalgebra::Point3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::world::{GroundTruthTree, PatchKind, World};
use crate::geom::{Iso3, Label, PointCloud, Vec3};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub vertical_fov_deg: f64,
    /// Elevation of the centre of the vertical fan (deg).
    pub vertical_center_deg: f64,
    pub channels: usize,
    pub horizontal_resolution_deg: f64,
    pub max_range: f64,
    /// Range within which returns are dense enough to be useful (m).
    pub effective_range: f64,
    pub range_noise: f64,
    pub scan_rate_hz: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            vertical_fov_deg: 60.0,
            vertical_center_deg: 0.0,
            channels: 32,
            horizontal_resolution_deg: 0.5,
            max_range: 30.0,
            effective_range: 15.0,
            range_noise: 0.01,
            scan_rate_hz: 10.0,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.vertical_fov_deg > 0.0) {
            return Err("vertical FOV must be positive".into());
        }
        if self.channels == 0 || !(self.horizontal_resolution_deg > 0.0) {
            return Err("channels and horizontal resolution must be positive".into());
        }
        if !(self.effective_range > 0.0 && self.effective_range <= self.max_range) {
            return Err("effective range must be positive and not exceed max range".into());
        }
        if self.range_noise < 0.0 {
            return Err("range noise must be non-negative".into());
        }
        Ok(())
    }

    pub fn elevations(&self) -> Vec<f64> {
        let c = self.vertical_center_deg.to_radians();
        if self.channels == 1 {
            return vec![c];
        }
        let fov = self.vertical_fov_deg.to_radians();
        (0..self.channels)
            .map(|i| c - fov / 2.0 + fov * i as f64 / (self.channels - 1) as f64)
            .collect()
    }

    pub fn azimuth_steps(&self) -> usize {
        ((360.0 / self.horizontal_resolution_deg).round() as usize).max(1)
    }

    /// Unit ray directions in the sensor frame, channel-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let n_az = self.azimuth_steps();
        let mut dirs = Vec::with_capacity(n_az * self.channels);
        for el in self.elevations() {
            let (se, ce) = el.sin_cos();
            for k in 0..n_az {
                let az = 2.0 * std::f64::consts::PI * k as f64 / n_az as f64;
                let (sa, ca) = az.sin_cos();
                dirs.push(Vec3::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }

    /// Highest elevation angle of the fan (rad).
    pub fn top_elevation(&self) -> f64 {
        *self.elevations().last().expect("at least one channel")
    }
}

/// Tree prefiltered for one scan, with a 2D bounding circle.
struct Candidate<'a> {
    tree: &'a GroundTruthTree,
    cx: f64,
    cy: f64,
    radius: f64,
}

struct ScanContext<'a> {
    world: &'a World,
    trees: Vec<Candidate<'a>>,
    zmin: f64,
    zmax: f64,
    /// Bound on the terrain gradient norm around the sensor.
    slope: f64,
}

impl<'a> ScanContext<'a> {
    fn new(world: &'a World, origin: &Vec3, range: f64) -> Self {
        let trees = world
            .trees
            .iter()
            .filter_map(|t| {
                let lean = t.lean_angle.tan() * t.height;
                let top = t.center_at(t.height);
                let cx = 0.5 * (t.base[0] + top[0]);
                let cy = 0.5 * (t.base[1] + top[1]);
                let r0 = t.stem[0].diameter * 0.5;
                let radius = 0.5 * lean + r0.max(t.crown_radius) + 1e-6;
                let d = (cx - origin.x).hypot(cy - origin.y);
                (d <= range + radius).then_some(Candidate {
                    tree: t,
                    cx,
                    cy,
                    radius,
                })
            })
            .collect();
        let (zmin, zmax, slope) = world.heightfield.bounds_around(origin.x, origin.y, range);
        Self {
            world,
            trees,
            zmin,
            zmax,
            slope,
        }
    }

    fn cast(&self, o: &Vec3, d: &Vec3, max_range: f64) -> Option<(f64, Label)> {
        let mut best: Option<(f64, Label)> = self
            .terrain_hit(o, d, max_range)
            .map(|t| (t, Label::Terrain));
        let mut limit = best.map_or(max_range, |b| b.0);
        for c in &self.trees {
            if !ray_near_circle(o, d, limit, c.cx, c.cy, c.radius) {
                continue;
            }
            if let Some(t) = stem_hit(c.tree, o, d, limit) {
                best = Some((t, Label::Stem(c.tree.id)));
                limit = t;
            }
            if let Some(t) = crown_hit(c.tree, o, d, limit) {
                best = Some((t, Label::Crown(c.tree.id)));
                limit = t;
            }
        }
        for p in &self.world.patches {
            if p.kind != PatchKind::Bush {
                continue;
            }
            if !ray_near_circle(o, d, limit, p.center[0], p.center[1], p.radius) {
                continue;
            }
            let top = self.world.bush_top(p);
            if let Some(t) = bush_hit(p.center, p.radius, top, o, d, limit) {
                best = Some((t, Label::Patch(p.id)));
                limit = t;
            }
        }
        best
    }

    /// First crossing of the ray below the bilinear terrain surface.
    fn terrain_hit(&self, o: &Vec3, d: &Vec3, max_range: f64) -> Option<f64> {
        let hf = &self.world.heightfield;
        let f = |t: f64| o.z + t * d.z - hf.height(o.x + t * d.x, o.y + t * d.y);
        let mut t0 = 0.0;
        if o.z > self.zmax {
            if d.z >= 0.0 {
                return None;
            }
            t0 = (o.z - self.zmax) / -d.z;
        }
        let t_end = if d.z < 0.0 {
            max_range.min((o.z - self.zmin) / -d.z + 1e-9)
        } else if d.z > 0.0 {
            // Above the highest terrain in range the ray cannot come back down.
            max_range.min((self.zmax - o.z) / d.z + 1e-9)
        } else {
            max_range
        };
        if t0 > t_end {
            return None;
        }
        let step = 0.5 * hf.resolution;
        // |df/dt| is at most `rate`, so no crossing lies within f(a) / rate of `a`.
        let rate = d.z.abs() + self.slope * d.x.hypot(d.y);
        let mut a = t0;
        let mut fa = f(a);
        if fa <= 0.0 {
            return (a > 0.0).then_some(a);
        }
        while a < t_end {
            let safe = if rate > 0.0 { fa / rate } else { f64::INFINITY };
            let b = (a + safe.max(step)).min(t_end);
            let fb = f(b);
            if fb > 0.0 {
                a = b;
                fa = fb;
                continue;
            }
            return Some(refine_root(&f, a, fa, b, fb));
        }
        None
    }
}

/// Root of `f` in `[a, b]` with `f(a) > 0 >= f(b)`, by Illinois false position.
fn refine_root(f: &impl Fn(f64) -> f64, mut a: f64, fa: f64, mut b: f64, fb: f64) -> f64 {
    // True end values, and the secant weights that Illinois halves on a stuck side.
    let (mut fa, mut fb) = (fa, fb);
    let (mut wa, mut wb) = (fa, fb);
    let mut side = 0i8;
    for _ in 0..60 {
        if b - a < 1e-11 || fa < 1e-13 || fb > -1e-13 {
            break;
        }
        let m = (a * wb - b * wa) / (wb - wa);
        let m = if m > a && m < b { m } else { 0.5 * (a + b) };
        let fm = f(m);
        if fm > 0.0 {
            (a, fa, wa) = (m, fm, fm);
            if side == 1 {
                wb *= 0.5;
            }
            side = 1;
        } else {
            (b, fb, wb) = (m, fm, fm);
            if side == -1 {
                wa *= 0.5;
            }
            side = -1;
        }
    }
    if fa < -fb {
        a
    } else {
        b
    }
}

/// Whether the 2D projection of the ray segment passes within `r` of (cx, cy).
fn ray_near_circle(o: &Vec3, d: &Vec3, limit: f64, cx: f64, cy: f64, r: f64) -> bool {
    let (ox, oy) = (cx - o.x, cy - o.y);
    let dd = d.x * d.x + d.y * d.y;
    if dd < 1e-18 {
        return ox * ox + oy * oy <= r * r;
    }
    let t = ((ox * d.x + oy * d.y) / dd).clamp(0.0, limit);
    let (ex, ey) = (ox - t * d.x, oy - t * d.y);
    ex * ex + ey * ey <= r * r
}

/// Intersection with the stack of oblique cone frustums forming the stem.
///
/// Cross-sections are horizontal circles whose centres follow the lean line and
/// whose radius is linear in height within each frustum, so the surface equation
/// is quadratic in the ray parameter.
fn stem_hit(tree: &GroundTruthTree, o: &Vec3, d: &Vec3, limit: f64) -> Option<f64> {
    let s = tree.lean_angle.tan();
    let (ux, uy) = (tree.lean_direction.cos() * s, tree.lean_direction.sin() * s);
    let h0 = o.z - tree.base[2];
    // Horizontal offset from the axis: A + t B.
    let ax = o.x - tree.base[0] - h0 * ux;
    let ay = o.y - tree.base[1] - h0 * uy;
    let bx = d.x - d.z * ux;
    let by = d.y - d.z * uy;
    let mut best: Option<f64> = None;
    for seg in tree.stem.windows(2) {
        let (k0, k1) = (seg[0], seg[1]);
        let slope = (k1.diameter - k0.diameter) * 0.5 / (k1.height - k0.height);
        let a = k0.diameter * 0.5 + slope * (h0 - k0.height);
        let b = slope * d.z;
        // Quick reject on height span.
        if d.z.abs() < 1e-15 && (h0 < k0.height || h0 > k1.height) {
            continue;
        }
        let qa = bx * bx + by * by - b * b;
        let qb = 2.0 * (ax * bx + ay * by - a * b);
        let qc = ax * ax + ay * ay - a * a;
        let mut roots = [f64::NAN; 2];
        if qa.abs() < 1e-14 {
            if qb.abs() > 1e-14 {
                roots[0] = -qc / qb;
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            roots = [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)];
        }
        for t in roots {
            if !(t > 1e-9 && t < limit) {
                continue;
            }
            let h = h0 + t * d.z;
            if h < k0.height || h > k1.height {
                continue;
            }
            if a + b * t < 0.0 {
                continue;
            }
            if best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

fn crown_hit(tree: &GroundTruthTree, o: &Vec3, d: &Vec3, limit: f64) -> Option<f64> {
    if d.z.abs() < 1e-12 {
        return None;
    }
    let z = tree.base[2] + tree.height;
    let t = (z - o.z) / d.z;
    if !(t > 1e-9 && t < limit) {
        return None;
    }
    let c = tree.center_at(tree.height);
    let (x, y) = (o.x + t * d.x, o.y + t * d.y);
    ((x - c[0]).hypot(y - c[1]) <= tree.crown_radius).then_some(t)
}

/// Vertical cylinder with a flat cap standing in for a bush.
fn bush_hit(
    center: [f64; 2],
    radius: f64,
    top: f64,
    o: &Vec3,
    d: &Vec3,
    limit: f64,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    if d.z.abs() > 1e-12 {
        let t = (top - o.z) / d.z;
        if t > 1e-9 && t < limit {
            let (x, y) = (o.x + t * d.x, o.y + t * d.y);
            if (x - center[0]).hypot(y - center[1]) <= radius {
                best = Some(t);
            }
        }
    }
    let (ox, oy) = (o.x - center[0], o.y - center[1]);
    let qa = d.x * d.x + d.y * d.y;
    if qa > 1e-14 {
        let qb = 2.0 * (ox * d.x + oy * d.y);
        let qc = ox * ox + oy * oy - radius * radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let t = (-qb - disc.sqrt()) / (2.0 * qa);
            if t > 1e-9 && t < limit.min(best.unwrap_or(f64::INFINITY)) && o.z + t * d.z <= top {
                best = Some(t);
            }
        }
    }
    best
}

/// Full sweep of the sensor at `sensor_pose`; points in the sensor frame.
pub fn scan_lidar(
    world: &World,
    sensor_pose: &Iso3,
    lidar: &LidarSpec,
    rng: &mut impl Rng,
) -> PointCloud {
    scan_lidar_with(world, sensor_pose, lidar, rng, Execution::default())
}

pub fn scan_lidar_with(
    world: &World,
    sensor_pose: &Iso3,
    lidar: &LidarSpec,
    rng: &mut impl Rng,
    exec: Execution,
) -> PointCloud {
    let dirs = lidar.directions();
    // Noise is drawn up front so the result does not depend on execution order.
    let noise: Vec<f64> = if lidar.range_noise > 0.0 {
        (0..dirs.len())
            .map(|_| lidar.range_noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    } else {
        Vec::new()
    };
    let origin = sensor_pose.translation.vector;
    let ctx = ScanContext::new(world, &origin, lidar.max_range);
    let rot = sensor_pose.rotation;
    let hits = exec.map_range(dirs.len(), |i| {
        let d = rot * dirs[i];
        ctx.cast(&origin, &d, lidar.max_range).map(|(t, label)| {
            let r = t + noise.get(i).copied().unwrap_or(0.0);
            (dirs[i] * r, label)
        })
    });
    let mut cloud = PointCloud::new();
    for (p, label) in hits.into_iter().flatten() {
        cloud.push(p, label);
    }
    cloud
}

/// Expresses sensor-frame points in the world frame.
pub fn to_world(cloud: &PointCloud, sensor_pose: &Iso3) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| (sensor_pose * Point3::from(*p)).coords)
            .collect(),
        labels: cloud.labels.clone(),
    }
}
