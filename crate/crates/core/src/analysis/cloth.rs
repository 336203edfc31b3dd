//! Cloth simulation ground filter.
//!
//! The cloud is flipped upside down and a grid of particles falls onto it under a
//! constant gravity step. Particles that reach the flipped surface become fixed;
//! spring constraints between neighbours keep the cloth from sinking into gaps
//! left by stems and low vegetation.

use serde::{Deserialize, Serialize};

use super::terrain::TerrainModel;
use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClothParams {
    pub resolution: f64,
    /// Constraint passes per time step.
    pub rigidness: usize,
    pub gravity_step: f64,
    /// Iterations allowed on top of the time the cloth needs to fall through the
    /// height range of the cloud.
    pub max_iterations: usize,
    pub convergence: f64,
    pub class_threshold: f64,
    /// Largest step between a settled particle and the collision height of an
    /// unsettled neighbour that the steep-slope post-processing closes.
    pub slope_snap: f64,
}

impl Default for ClothParams {
    fn default() -> Self {
        Self {
            resolution: 0.5,
            rigidness: 3,
            gravity_step: 0.02,
            max_iterations: 500,
            convergence: 1e-3,
            class_threshold: 0.1,
            slope_snap: 0.3,
        }
    }
}

impl ClothParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.resolution > 0.0
            && self.rigidness > 0
            && self.gravity_step > 0.0
            && self.max_iterations > 0
            && self.convergence > 0.0
            && self.class_threshold > 0.0
            && self.slope_snap >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "cloth parameters must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClothResult {
    pub terrain: TerrainModel,
    /// Per input point.
    pub ground: Vec<bool>,
    pub iterations: usize,
}

impl ClothResult {
    pub fn ground_count(&self) -> usize {
        self.ground.iter().filter(|g| **g).count()
    }
}

pub fn fit_terrain_cloth(cloud: &PointCloud, params: &ClothParams) -> Result<ClothResult> {
    params.validate()?;
    let (lo, hi) = cloud
        .bounds()
        .ok_or_else(|| Error::DegenerateTerrain("empty cloud".into()))?;
    let res = params.resolution;
    let origin = [
        (lo.x / res).floor() * res - res,
        (lo.y / res).floor() * res - res,
    ];
    let nx = ((hi.x - origin[0]) / res).floor() as usize + 2;
    let ny = ((hi.y - origin[1]) / res).floor() as usize + 2;
    let n = nx * ny;
    let cell = |x: f64, y: f64| -> usize {
        let i = (((x - origin[0]) / res).floor() as usize).min(nx - 1);
        let j = (((y - origin[1]) / res).floor() as usize).min(ny - 1);
        j * nx + i
    };

    // Collision height per particle (in the flipped frame): among the lowest points of
    // the cell, the one closest to the particle.
    let mut lowest = vec![f64::INFINITY; n];
    for p in &cloud.points {
        let k = cell(p.x, p.y);
        lowest[k] = lowest[k].min(p.z);
    }
    let band = 0.5 * res;
    let mut best = vec![(f64::INFINITY, f64::NAN); n];
    for p in &cloud.points {
        let k = cell(p.x, p.y);
        if p.z > lowest[k] + band {
            continue;
        }
        let (i, j) = (k % nx, k / nx);
        let cx = origin[0] + (i as f64 + 0.5) * res;
        let cy = origin[1] + (j as f64 + 0.5) * res;
        let d = (p.x - cx).hypot(p.y - cy);
        if d < best[k].0 {
            best[k] = (d, -p.z);
        }
    }
    let observed: Vec<bool> = best.iter().map(|b| b.1.is_finite()).collect();
    let mut collide: Vec<f64> = best.iter().map(|b| b.1).collect();
    fill_missing(&mut collide, nx, ny);

    let top = collide.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = collide.iter().copied().fold(f64::INFINITY, f64::min);
    let fall = ((top - bottom) / params.gravity_step).ceil() as usize;
    let mut z = vec![top + params.gravity_step; n];
    let mut movable = vec![true; n];
    let mut iterations = 0;
    for it in 0..fall + params.max_iterations {
        iterations = it + 1;
        let before = z.clone();
        for k in 0..n {
            if movable[k] {
                z[k] -= params.gravity_step;
            }
        }
        for _ in 0..params.rigidness {
            for j in 0..ny {
                for i in 0..nx {
                    let k = j * nx + i;
                    if i + 1 < nx {
                        satisfy(&mut z, &movable, k, k + 1);
                    }
                    if j + 1 < ny {
                        satisfy(&mut z, &movable, k, k + nx);
                    }
                }
            }
        }
        for k in 0..n {
            if movable[k] && z[k] <= collide[k] {
                z[k] = collide[k];
                movable[k] = false;
            }
        }
        let moved = z
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < params.convergence || movable.iter().all(|m| !m) {
            break;
        }
    }

    snap_slopes(&mut z, &mut movable, &collide, nx, ny, params.slope_snap);

    let mut terrain = TerrainModel::empty(origin, res, nx, ny);
    for k in 0..n {
        terrain.height[k] = -z[k];
    }
    let mut ground = Vec::with_capacity(cloud.len());
    let mut count = vec![0.0; n];
    for p in &cloud.points {
        let h = terrain.height_at(p.x, p.y).unwrap_or(f64::INFINITY);
        let g = (p.z - h).abs() <= params.class_threshold;
        if g {
            count[cell(p.x, p.y)] += 1.0;
        }
        ground.push(g);
    }
    if !ground.iter().any(|g| *g) {
        return Err(Error::DegenerateTerrain(
            "no point lies on the settled cloth".into(),
        ));
    }
    for k in 0..n {
        terrain.weight[k] = if observed[k] { count[k] + 0.1 } else { 0.0 };
    }
    Ok(ClothResult {
        terrain,
        ground,
        iterations,
    })
}

fn satisfy(z: &mut [f64], movable: &[bool], a: usize, b: usize) {
    let d = z[b] - z[a];
    match (movable[a], movable[b]) {
        (true, true) => {
            z[a] += 0.25 * d;
            z[b] -= 0.25 * d;
        }
        (true, false) => z[a] += 0.5 * d,
        (false, true) => z[b] -= 0.5 * d,
        (false, false) => {}
    }
}

/// On steep ground the springs hold particles above the flipped surface next to
/// settled ones. A particle whose collision height lies within `snap` of a settled
/// neighbour is settled there in turn, spreading out from the settled particles.
fn snap_slopes(
    z: &mut [f64],
    movable: &mut [bool],
    collide: &[f64],
    nx: usize,
    ny: usize,
    snap: f64,
) {
    let mut queue: std::collections::VecDeque<usize> =
        (0..z.len()).filter(|&k| !movable[k]).collect();
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % nx, k / nx);
        let mut near = [None; 4];
        if i > 0 {
            near[0] = Some(k - 1);
        }
        if i + 1 < nx {
            near[1] = Some(k + 1);
        }
        if j > 0 {
            near[2] = Some(k - nx);
        }
        if j + 1 < ny {
            near[3] = Some(k + nx);
        }
        for m in near.into_iter().flatten() {
            if movable[m] && (z[k] - collide[m]).abs() <= snap {
                z[m] = collide[m];
                movable[m] = false;
                queue.push_back(m);
            }
        }
    }
}

/// Fills non-finite cells with the value of the nearest filled cell (breadth-first).
fn fill_missing(v: &mut [f64], nx: usize, ny: usize) {
    let mut queue: std::collections::VecDeque<usize> =
        (0..v.len()).filter(|&k| v[k].is_finite()).collect();
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % nx, k / nx);
        let mut push = |m: usize| {
            if !v[m].is_finite() {
                v[m] = v[k];
                queue.push_back(m);
            }
        };
        if i > 0 {
            push(k - 1);
        }
        if i + 1 < nx {
            push(k + 1);
        }
        if j > 0 {
            push(k - nx);
        }
        if j + 1 < ny {
            push(k + nx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Label, Vec3};
    use rand::{Rng, SeedableRng};

    fn plane(slope_deg: f64, noise: f64, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = slope_deg.to_radians().tan();
        let mut pc = PointCloud::new();
        for _ in 0..20_000 {
            let (x, y) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let n = if noise > 0.0 {
                rng.random_range(-noise..noise)
            } else {
                0.0
            };
            pc.push(Vec3::new(x, y, g * x + n), Label::Terrain);
        }
        pc
    }

    #[test]
    fn flat_plane_is_all_ground() {
        let r = fit_terrain_cloth(&plane(0.0, 0.0, 1), &ClothParams::default()).unwrap();
        assert_eq!(r.ground_count(), 20_000);
        assert!(r.terrain.height.iter().all(|h| h.abs() < 0.1));
    }

    #[test]
    fn cylinder_points_are_not_ground() {
        let mut pc = plane(0.0, 0.01, 2);
        let n_ground = pc.len();
        for k in 0..3000 {
            let a = k as f64 * 0.37;
            let z = 0.2 + 4.0 * (k as f64 / 3000.0);
            pc.push(
                Vec3::new(2.0 + 0.2 * a.cos(), 1.0 + 0.2 * a.sin(), z),
                Label::Stem(0),
            );
        }
        let r = fit_terrain_cloth(&pc, &ClothParams::default()).unwrap();
        let recall = r.ground[..n_ground].iter().filter(|g| **g).count() as f64 / n_ground as f64;
        assert!(recall >= 0.99, "recall {recall}");
        assert!(r.ground[n_ground..].iter().all(|g| !g));
    }

    #[test]
    fn sloped_plane_is_followed() {
        let params = ClothParams::default();
        let g = 10f64.to_radians().tan();
        let r = fit_terrain_cloth(&plane(10.0, 0.0, 3), &params).unwrap();
        let mut se = 0.0;
        let mut n = 0.0;
        for j in 2..r.terrain.ny - 2 {
            for i in 2..r.terrain.nx - 2 {
                let [x, _] = r.terrain.cell_center(i, j);
                se += (r.terrain.height[r.terrain.index(i, j)] - g * x).powi(2);
                n += 1.0;
            }
        }
        assert!((se / n).sqrt() < params.class_threshold);
    }

    #[test]
    fn tall_slope_is_reached_everywhere() {
        // 15 degrees over 60 m spans 16 m, more than the cloth falls in max_iterations.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let g = 15f64.to_radians().tan();
        let mut pc = PointCloud::new();
        for _ in 0..30_000 {
            let (x, y) = (rng.random_range(-30.0..30.0), rng.random_range(-5.0..5.0));
            pc.push(Vec3::new(x, y, g * x), Label::Terrain);
        }
        let params = ClothParams::default();
        assert!(60.0 * g > params.max_iterations as f64 * params.gravity_step);
        let r = fit_terrain_cloth(&pc, &params).unwrap();
        assert_eq!(r.ground_count(), pc.len());
    }

    #[test]
    fn empty_cloud_is_degenerate() {
        assert!(matches!(
            fit_terrain_cloth(&PointCloud::new(), &ClothParams::default()),
            Err(Error::DegenerateTerrain(_))
        ));
    }
}
