use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Extent, Label, PointCloud, Vec3};
use crate::rng::{self, Stream};

/// Height at which DBH is measured, above local terrain.
pub const BREAST_HEIGHT: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSpec {
    /// Standard deviation of the rolling component (m).
    pub amplitude: f64,
    pub correlation_length: f64,
    /// Inclination of the planar component (rad).
    pub mean_slope: f64,
    /// Downhill-to-uphill direction of the planar component (rad).
    pub slope_heading: f64,
    pub resolution: f64,
    /// Heightfield margin beyond the extent so long rays still find ground (m).
    pub margin: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.3,
            correlation_length: 12.0,
            mean_slope: 0.05,
            slope_heading: 0.0,
            resolution: 0.5,
            margin: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub count: usize,
    pub min_spacing: f64,
    pub base_diameter: [f64; 2],
    /// Diameter lost per metre of height.
    pub taper: f64,
    pub height: [f64; 2],
    pub lean_max: f64,
    pub knot_spacing: f64,
    pub crown_radius: [f64; 2],
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            count: 0,
            min_spacing: 2.5,
            base_diameter: [0.22, 0.6],
            taper: 0.008,
            height: [14.0, 24.0],
            lean_max: 5f64.to_radians(),
            knot_spacing: 1.0,
            crown_radius: [1.5, 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    /// Visible low vegetation that slows the robot down.
    Bush,
    /// Soft ground invisible to the sensors that traps the robot.
    Damp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub count: usize,
    pub radius: [f64; 2],
    pub kind: PatchKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub extent: Extent,
    #[serde(default)]
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub trees: TreeSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Height of bush proxy geometry above terrain (m).
    #[serde(default = "default_bush_height")]
    pub bush_height: f64,
    pub seed: u64,
}

fn default_bush_height() -> f64 {
    0.6
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        let e = &self.extent;
        if !(e.width() > 0.0 && e.height() > 0.0) {
            return bad("extent must have positive width and height");
        }
        let t = &self.trees;
        if t.count > 0 {
            if !(t.base_diameter[0] > 0.0 && t.base_diameter[0] <= t.base_diameter[1]) {
                return bad("base diameter range must be positive and ordered");
            }
            if t.min_spacing <= t.base_diameter[1] {
                return bad("min spacing must exceed the largest base diameter");
            }
            if !(t.height[0] > 0.0 && t.height[0] <= t.height[1]) {
                return bad("height range must be positive and ordered");
            }
            if t.taper <= 0.0 {
                return bad("taper must be positive so diameter decreases with height");
            }
            if t.taper * t.height[1] >= t.base_diameter[0] {
                return bad("taper would shrink the thinnest stem to zero below its top");
            }
            if t.knot_spacing <= 0.0 {
                return bad("knot spacing must be positive");
            }
            if !(0.0..PI / 4.0).contains(&t.lean_max) {
                return bad("lean angle must be in [0, 45°)");
            }
        }
        let tr = &self.terrain;
        if !(tr.resolution > 0.0 && tr.correlation_length > 0.0 && tr.amplitude >= 0.0) {
            return bad("terrain resolution and correlation length must be positive");
        }
        if tr.mean_slope.abs() >= PI / 3.0 {
            return bad("terrain slope too steep");
        }
        for o in &self.obstacles {
            if !(o.radius[0] > 0.0 && o.radius[0] <= o.radius[1]) {
                return bad("obstacle radius range must be positive and ordered");
            }
            if 2.0 * o.radius[1] >= e.width().min(e.height()) && o.count > 0 {
                return bad("obstacles do not fit inside the extent");
            }
        }
        Ok(())
    }
}

/// Regular grid of terrain elevations, bilinearly interpolated, clamped at the border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub z: Vec<f64>,
}

impl Heightfield {
    pub fn flat(extent: Extent, resolution: f64, z: f64) -> Self {
        let nx = (extent.width() / resolution).ceil() as usize + 1;
        let ny = (extent.height() / resolution).ceil() as usize + 1;
        Self {
            origin: [extent.min_x, extent.min_y],
            resolution,
            nx,
            ny,
            z: vec![z; nx * ny],
        }
    }

    pub fn from_fn(extent: Extent, resolution: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut hf = Self::flat(extent, resolution, 0.0);
        for j in 0..hf.ny {
            for i in 0..hf.nx {
                let x = hf.origin[0] + i as f64 * resolution;
                let y = hf.origin[1] + j as f64 * resolution;
                hf.z[j * hf.nx + i] = f(x, y);
            }
        }
        hf
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.z[j * self.nx + i]
    }

    #[inline]
    fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let gx = ((x - self.origin[0]) / self.resolution).clamp(0.0, (self.nx - 1) as f64);
        let gy = ((y - self.origin[1]) / self.resolution).clamp(0.0, (self.ny - 1) as f64);
        let i = (gx.floor() as usize).min(self.nx.saturating_sub(2));
        let j = (gy.floor() as usize).min(self.ny.saturating_sub(2));
        (i, j, gx - i as f64, gy - j as f64)
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.nx < 2 || self.ny < 2 {
            return self.z.first().copied().unwrap_or(0.0);
        }
        let (i, j, fx, fy) = self.locate(x, y);
        let z00 = self.at(i, j);
        let z10 = self.at(i + 1, j);
        let z01 = self.at(i, j + 1);
        let z11 = self.at(i + 1, j + 1);
        z00 * (1.0 - fx) * (1.0 - fy)
            + z10 * fx * (1.0 - fy)
            + z01 * (1.0 - fx) * fy
            + z11 * fx * fy
    }

    /// Central-difference gradient of the interpolated surface.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let h = self.resolution * 0.5;
        (
            (self.height(x + h, y) - self.height(x - h, y)) / (2.0 * h),
            (self.height(x, y + h) - self.height(x, y - h)) / (2.0 * h),
        )
    }

    /// Min and max elevation over grid nodes touching the square of half-size `r` around (x, y).
    pub fn range_around(&self, x: f64, y: f64, r: f64) -> (f64, f64) {
        let (lo, hi, _) = self.bounds_around(x, y, r);
        (lo, hi)
    }

    /// Height range and a bound on the surface gradient norm within `r` of (x, y).
    pub fn bounds_around(&self, x: f64, y: f64, r: f64) -> (f64, f64, f64) {
        let to_i = |v: f64, o: f64, n: usize| {
            (((v - o) / self.resolution).floor().max(0.0) as usize).min(n - 1)
        };
        let i0 = to_i(x - r, self.origin[0], self.nx);
        let i1 = (to_i(x + r, self.origin[0], self.nx) + 1).min(self.nx - 1);
        let j0 = to_i(y - r, self.origin[1], self.ny);
        let j1 = (to_i(y + r, self.origin[1], self.ny) + 1).min(self.ny - 1);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let (mut gx, mut gy) = (0.0f64, 0.0f64);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let z = self.at(i, j);
                lo = lo.min(z);
                hi = hi.max(z);
                if i < i1 {
                    gx = gx.max((self.at(i + 1, j) - z).abs());
                }
                if j < j1 {
                    gy = gy.max((self.at(i, j + 1) - z).abs());
                }
            }
        }
        // Bilinear partials are convex combinations of the edge differences.
        (lo, hi, gx.hypot(gy) / self.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StemKnot {
    pub height: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTree {
    pub id: u32,
    /// Stem axis at ground level, world frame.
    pub base: [f64; 3],
    pub stem: Vec<StemKnot>,
    pub height: f64,
    pub lean_direction: f64,
    pub lean_angle: f64,
    pub crown_radius: f64,
}

impl GroundTruthTree {
    /// Horizontal centre of the stem cross-section `h` metres above the base.
    pub fn center_at(&self, h: f64) -> [f64; 2] {
        let s = self.lean_angle.tan() * h;
        [
            self.base[0] + s * self.lean_direction.cos(),
            self.base[1] + s * self.lean_direction.sin(),
        ]
    }

    /// Stem diameter `h` metres above the base; `None` outside the stem.
    pub fn diameter_at(&self, h: f64) -> Option<f64> {
        if h < 0.0 || h > self.height {
            return None;
        }
        let k = self.stem.partition_point(|k| k.height <= h);
        if k == 0 {
            return Some(self.stem[0].diameter);
        }
        if k >= self.stem.len() {
            return self.stem.last().map(|k| k.diameter);
        }
        let (a, b) = (self.stem[k - 1], self.stem[k]);
        let t = (h - a.height) / (b.height - a.height);
        Some(a.diameter + t * (b.diameter - a.diameter))
    }

    pub fn dbh(&self) -> f64 {
        self.diameter_at(BREAST_HEIGHT).unwrap_or(0.0)
    }

    /// Radial residual of a point against the stem surface (0 on the surface).
    pub fn surface_residual(&self, p: &Vec3) -> Option<f64> {
        let h = p.z - self.base[2];
        let d = self.diameter_at(h)?;
        let c = self.center_at(h);
        Some((p.x - c[0]).hypot(p.y - c[1]) - d * 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: u32,
    pub center: [f64; 2],
    pub radius: f64,
    pub kind: PatchKind,
}

impl Patch {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).hypot(y - self.center[1]) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub extent: Extent,
    pub heightfield: Heightfield,
    pub trees: Vec<GroundTruthTree>,
    pub patches: Vec<Patch>,
    pub bush_height: f64,
}

impl World {
    pub fn terrain_height(&self, x: f64, y: f64) -> f64 {
        self.heightfield.height(x, y)
    }

    pub fn patch_at(&self, x: f64, y: f64) -> Option<&Patch> {
        self.patches.iter().find(|p| p.contains(x, y))
    }

    pub fn in_damp(&self, x: f64, y: f64) -> bool {
        self.patches
            .iter()
            .any(|p| p.kind == PatchKind::Damp && p.contains(x, y))
    }

    pub fn in_bush(&self, x: f64, y: f64) -> bool {
        self.patches
            .iter()
            .any(|p| p.kind == PatchKind::Bush && p.contains(x, y))
    }

    /// Top of a bush proxy: flat cap at terrain-at-centre plus bush height.
    pub fn bush_top(&self, patch: &Patch) -> f64 {
        self.terrain_height(patch.center[0], patch.center[1]) + self.bush_height
    }

    /// Noise-free labelled surface samples of the whole world on a regular spacing:
    /// terrain grid, stem rings, crown discs and bush proxies.
    pub fn sample_cloud(&self, spacing: f64) -> PointCloud {
        let mut pc = PointCloud::new();
        let e = &self.extent;
        let nx = (e.width() / spacing).floor() as usize + 1;
        let ny = (e.height() / spacing).floor() as usize + 1;
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = (e.min_x + i as f64 * spacing, e.min_y + j as f64 * spacing);
                if self
                    .patch_at(x, y)
                    .is_some_and(|p| p.kind == PatchKind::Bush)
                {
                    continue;
                }
                let inside = self
                    .trees
                    .iter()
                    .any(|t| (x - t.base[0]).hypot(y - t.base[1]) < t.stem[0].diameter * 0.5);
                if !inside {
                    pc.push(Vec3::new(x, y, self.terrain_height(x, y)), Label::Terrain);
                }
            }
        }
        for t in &self.trees {
            let rings = (t.height / spacing).floor() as usize;
            for k in 0..=rings {
                let h = k as f64 * spacing;
                let Some(d) = t.diameter_at(h) else { continue };
                let c = t.center_at(h);
                let n = ((PI * d / spacing).ceil() as usize).max(8);
                for a in 0..n {
                    let a = (a as f64 + 0.5 * (k % 2) as f64) * 2.0 * PI / n as f64;
                    pc.push(
                        Vec3::new(
                            c[0] + 0.5 * d * a.cos(),
                            c[1] + 0.5 * d * a.sin(),
                            t.base[2] + h,
                        ),
                        Label::Stem(t.id),
                    );
                }
            }
            let c = t.center_at(t.height);
            let z = t.base[2] + t.height;
            let step = 2.0 * spacing;
            let m = (t.crown_radius / step).floor() as i64;
            for i in -m..=m {
                for j in -m..=m {
                    let (dx, dy) = (i as f64 * step, j as f64 * step);
                    if dx.hypot(dy) <= t.crown_radius {
                        pc.push(Vec3::new(c[0] + dx, c[1] + dy, z), Label::Crown(t.id));
                    }
                }
            }
        }
        for p in self.patches.iter().filter(|p| p.kind == PatchKind::Bush) {
            let top = self.bush_top(p);
            let m = (p.radius / spacing).floor() as i64;
            for i in -m..=m {
                for j in -m..=m {
                    let (dx, dy) = (i as f64 * spacing, j as f64 * spacing);
                    if dx.hypot(dy) <= p.radius {
                        pc.push(
                            Vec3::new(p.center[0] + dx, p.center[1] + dy, top),
                            Label::Patch(p.id),
                        );
                    }
                }
            }
        }
        pc
    }
}

struct Harmonic {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

fn terrain_function(spec: &TerrainSpec, rng: &mut impl Rng) -> impl Fn(f64, f64) -> f64 {
    let mut harmonics: Vec<Harmonic> = (0..6)
        .map(|_| {
            let dir = rng.random_range(0.0..2.0 * PI);
            let wavelength = 4.0 * spec.correlation_length * 2f64.powf(rng.random_range(-1.0..1.0));
            let k = 2.0 * PI / wavelength;
            Harmonic {
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: wavelength,
            }
        })
        .collect();
    let norm = (harmonics
        .iter()
        .map(|h| h.amplitude * h.amplitude)
        .sum::<f64>()
        / 2.0)
        .sqrt();
    for h in &mut harmonics {
        h.amplitude *= spec.amplitude / norm;
    }
    let grade = spec.mean_slope.tan();
    let (sh, ch) = spec.slope_heading.sin_cos();
    move |x, y| {
        let rolling: f64 = harmonics
            .iter()
            .map(|h| h.amplitude * (h.kx * x + h.ky * y + h.phase).sin())
            .sum();
        grade * (x * ch + y * sh) + rolling
    }
}

/// Generates the ground-truth forest for `spec`, deterministically from its seed.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::World);
    let terrain = terrain_function(&spec.terrain, &mut rng);
    let hf_extent = spec.extent.grown(spec.terrain.margin);
    let heightfield = Heightfield::from_fn(hf_extent, spec.terrain.resolution, &terrain);
    let extent = spec.extent;

    let mut patches: Vec<Patch> = Vec::new();
    for o in &spec.obstacles {
        for _ in 0..o.count {
            let radius = rng.random_range(o.radius[0]..=o.radius[1]);
            let center = [
                rng.random_range(extent.min_x + radius..=extent.max_x - radius),
                rng.random_range(extent.min_y + radius..=extent.max_y - radius),
            ];
            patches.push(Patch {
                id: patches.len() as u32,
                center,
                radius,
                kind: o.kind,
            });
        }
    }

    let ts = &spec.trees;
    let mut trees: Vec<GroundTruthTree> = Vec::with_capacity(ts.count);
    let budget = 10 * ts.count;
    let mut attempts = 0;
    while trees.len() < ts.count && attempts < budget {
        attempts += 1;
        let x = rng.random_range(extent.min_x..=extent.max_x);
        let y = rng.random_range(extent.min_y..=extent.max_y);
        // Draw every attribute before the rejection test so the stream advances uniformly.
        let base_d = rng.random_range(ts.base_diameter[0]..=ts.base_diameter[1]);
        let height = rng.random_range(ts.height[0]..=ts.height[1]);
        let lean_angle = rng.random_range(0.0..=ts.lean_max);
        let lean_direction = rng.random_range(0.0..2.0 * PI);
        let crown_radius = rng.random_range(ts.crown_radius[0]..=ts.crown_radius[1]);
        let spaced = trees
            .iter()
            .all(|t| (t.base[0] - x).hypot(t.base[1] - y) >= ts.min_spacing);
        let clear = patches
            .iter()
            .all(|p| (p.center[0] - x).hypot(p.center[1] - y) > p.radius + 0.5);
        if !(spaced && clear) {
            continue;
        }
        let mut stem = Vec::new();
        let mut h = 0.0;
        while h < height {
            stem.push(StemKnot {
                height: h,
                diameter: base_d - ts.taper * h,
            });
            h += ts.knot_spacing;
        }
        stem.push(StemKnot {
            height,
            diameter: base_d - ts.taper * height,
        });
        if stem.len() >= 2 {
            let n = stem.len();
            if stem[n - 1].height - stem[n - 2].height < 1e-6 {
                stem.remove(n - 2);
            }
        }
        trees.push(GroundTruthTree {
            id: trees.len() as u32,
            base: [x, y, heightfield.height(x, y)],
            stem,
            height,
            lean_direction,
            lean_angle,
            crown_radius,
        });
    }
    if trees.len() < ts.count {
        return Err(Error::PlacementExhausted {
            requested: ts.count,
            achieved: trees.len(),
        });
    }

    Ok(World {
        extent,
        heightfield,
        trees,
        patches,
        bush_height: spec.bush_height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(count: usize) -> WorldSpec {
        WorldSpec {
            extent: Extent::new(0.0, 0.0, 125.0, 30.0),
            terrain: TerrainSpec::default(),
            trees: TreeSpec {
                count,
                ..TreeSpec::default()
            },
            obstacles: vec![],
            bush_height: 0.6,
            seed: 42,
        }
    }

    #[test]
    fn empty_forest_still_has_terrain() {
        let w = generate_world(&spec(0)).unwrap();
        assert!(w.trees.is_empty());
        assert!(w.heightfield.z.len() > 100);
    }

    #[test]
    fn hundred_trees_respect_spacing() {
        let s = spec(100);
        let w = generate_world(&s).unwrap();
        assert_eq!(w.trees.len(), 100);
        for (i, a) in w.trees.iter().enumerate() {
            for b in &w.trees[i + 1..] {
                let d = (a.base[0] - b.base[0]).hypot(a.base[1] - b.base[1]);
                assert!(
                    d >= s.trees.min_spacing,
                    "trees {} and {} at {d}",
                    a.id,
                    b.id
                );
            }
            assert!(s.extent.contains(a.base[0], a.base[1]));
            assert!((a.base[2] - w.terrain_height(a.base[0], a.base[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_world(&spec(30)).unwrap();
        let b = generate_world(&spec(30)).unwrap();
        assert_eq!(a, b);
        let ja = serde_json::to_vec(&a).unwrap();
        let jb = serde_json::to_vec(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn placement_exhausted_reports_count() {
        let mut s = spec(50);
        s.extent = Extent::new(0.0, 0.0, 5.0, 5.0);
        match generate_world(&s) {
            Err(Error::PlacementExhausted {
                requested,
                achieved,
            }) => {
                assert_eq!(requested, 50);
                assert!(achieved > 0 && achieved < 50);
            }
            other => panic!("expected placement error, got {other:?}"),
        }
    }

    #[test]
    fn stems_taper_strictly() {
        let w = generate_world(&spec(20)).unwrap();
        for t in &w.trees {
            assert_eq!(t.stem[0].height, 0.0);
            for k in t.stem.windows(2) {
                assert!(k[1].height > k[0].height);
                assert!(k[1].diameter < k[0].diameter);
            }
            assert!(t.stem.last().unwrap().diameter > 0.0);
        }
    }

    #[test]
    fn patches_inside_extent() {
        let mut s = spec(10);
        s.obstacles = vec![
            ObstacleSpec {
                count: 3,
                radius: [1.0, 2.0],
                kind: PatchKind::Bush,
            },
            ObstacleSpec {
                count: 2,
                radius: [1.0, 2.0],
                kind: PatchKind::Damp,
            },
        ];
        let w = generate_world(&s).unwrap();
        assert_eq!(w.patches.len(), 5);
        for p in &w.patches {
            assert!(s
                .extent
                .contains(p.center[0] - p.radius, p.center[1] - p.radius));
            assert!(s
                .extent
                .contains(p.center[0] + p.radius, p.center[1] + p.radius));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(10);
        s.trees.min_spacing = 0.5;
        assert!(matches!(generate_world(&s), Err(Error::InvalidSpec(_))));
        let mut s = spec(10);
        s.extent = Extent::new(0.0, 0.0, -1.0, 3.0);
        assert!(generate_world(&s).is_err());
        let mut s = spec(10);
        s.trees.taper = 0.0;
        assert!(generate_world(&s).is_err());
    }
}
