//! Tree instance segmentation of a single payload.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fit::{fit_cylinder, Cylinder};
use super::terrain::TerrainModel;
use crate::geom::{PointCloud, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    /// Normalised height band free of foliage.
    pub slice: [f64; 2],
    pub link_distance: f64,
    /// Minimum slice points for a seed.
    pub min_seed_points: usize,
    pub surface_band: f64,
    pub min_points: usize,
    pub radius_range: [f64; 2],
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            slice: [1.0, 3.0],
            link_distance: 0.3,
            min_seed_points: 10,
            surface_band: 0.1,
            min_points: 50,
            radius_range: [0.025, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeCandidate {
    /// Retained points in the frame of the input cloud.
    pub cloud: PointCloud,
    pub cylinder: Cylinder,
    /// Axis position at ground level.
    pub base: [f64; 3],
}

impl TreeCandidate {
    pub fn center(&self) -> [f64; 2] {
        [self.base[0], self.base[1]]
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Horizontal connected components with linking distance `d`; components listed in
/// order of their smallest point index.
pub fn connected_components(pts: &[[f64; 2]], d: f64) -> Vec<Vec<usize>> {
    let key = |p: &[f64; 2]| ((p[0] / d).floor() as i64, (p[1] / d).floor() as i64);
    let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut uf = UnionFind((0..pts.len()).collect());
    let d2 = d * d;
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy) = key(p);
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                let Some(cell) = grid.get(&(gx, gy)) else {
                    continue;
                };
                for &j in cell {
                    if j > i {
                        let q = &pts[j];
                        if (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= d2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..pts.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Slice seeds, nearest-seed partition of all points, per-cluster cylinder fit and
/// surface-band filtering.
pub fn segment_trees(
    cloud: &PointCloud,
    terrain: &TerrainModel,
    params: &SegmentParams,
) -> Vec<TreeCandidate> {
    let norm: Vec<Option<f64>> = cloud
        .points
        .iter()
        .map(|p| terrain.height_at(p.x, p.y).map(|h| p.z - h))
        .collect();
    let slice_idx: Vec<usize> = (0..cloud.len())
        .filter(|&i| norm[i].is_some_and(|z| z >= params.slice[0] && z <= params.slice[1]))
        .collect();
    if slice_idx.is_empty() {
        return Vec::new();
    }
    let slice_xy: Vec<[f64; 2]> = slice_idx
        .iter()
        .map(|&i| [cloud.points[i].x, cloud.points[i].y])
        .collect();
    let seeds: Vec<Vec<usize>> = connected_components(&slice_xy, params.link_distance)
        .into_iter()
        .filter(|c| c.len() >= params.min_seed_points)
        .collect();
    if seeds.is_empty() {
        return Vec::new();
    }
    let centroids: Vec<[f64; 2]> = seeds
        .iter()
        .map(|c| {
            let n = c.len() as f64;
            [
                c.iter().map(|&k| slice_xy[k][0]).sum::<f64>() / n,
                c.iter().map(|&k| slice_xy[k][1]).sum::<f64>() / n,
            ]
        })
        .collect();

    // Voronoi partition of every point with a normalised height.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); seeds.len()];
    for (i, p) in cloud.points.iter().enumerate() {
        if norm[i].is_none() {
            continue;
        }
        let mut best = (f64::INFINITY, 0);
        for (s, c) in centroids.iter().enumerate() {
            let d = (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2);
            if d < best.0 {
                best = (d, s);
            }
        }
        members[best.1].push(i);
    }

    let mut out = Vec::new();
    for cluster in &members {
        let fit_pts: Vec<Vec3> = cluster
            .iter()
            .filter(|&&i| norm[i].is_some_and(|z| z >= params.slice[0] && z <= params.slice[1]))
            .map(|&i| cloud.points[i])
            .collect();
        let Ok(cyl) = fit_cylinder(&fit_pts) else {
            continue;
        };
        if cyl.radius < params.radius_range[0] || cyl.radius > params.radius_range[1] {
            continue;
        }
        let keep: Vec<usize> = cluster
            .iter()
            .copied()
            .filter(|&i| cyl.surface_distance(&cloud.points[i]) <= params.surface_band)
            .collect();
        if keep.len() < params.min_points {
            continue;
        }
        let c0 = cyl.center_at(cyl.point[2]);
        let ground = terrain.height_at(c0[0], c0[1]).unwrap_or(cyl.point[2]);
        let c = cyl.center_at(ground);
        out.push(TreeCandidate {
            cloud: cloud.select(&keep),
            cylinder: cyl,
            base: [c[0], c[1], ground],
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Label;

    fn flat_terrain() -> TerrainModel {
        let mut t = TerrainModel::empty([-20.0, -20.0], 0.5, 80, 80);
        t.height.iter_mut().for_each(|h| *h = 0.0);
        t.weight.iter_mut().for_each(|w| *w = 1.0);
        t
    }

    fn stem(pc: &mut PointCloud, c: [f64; 2], r: f64, top: f64, id: u32) {
        let n = (top / 0.02) as usize;
        for k in 0..n {
            let z = k as f64 * 0.02;
            for a in 0..24 {
                let a = a as f64 * std::f64::consts::TAU / 24.0 + 0.1 * k as f64;
                pc.push(
                    Vec3::new(c[0] + r * a.cos(), c[1] + r * a.sin(), z),
                    Label::Stem(id),
                );
            }
        }
    }

    fn ground(pc: &mut PointCloud) {
        for i in -40..40 {
            for j in -40..40 {
                pc.push(
                    Vec3::new(i as f64 * 0.2, j as f64 * 0.2, 0.0),
                    Label::Terrain,
                );
            }
        }
    }

    #[test]
    fn single_tree_radius() {
        let mut pc = PointCloud::new();
        ground(&mut pc);
        stem(&mut pc, [1.0, 2.0], 0.15, 5.0, 0);
        let c = segment_trees(&pc, &flat_terrain(), &SegmentParams::default());
        assert_eq!(c.len(), 1);
        assert!((c[0].cylinder.radius - 0.15).abs() < 0.01);
        assert!((c[0].base[0] - 1.0).abs() < 0.01 && (c[0].base[1] - 2.0).abs() < 0.01);
    }

    #[test]
    fn two_trees_are_separate() {
        let mut pc = PointCloud::new();
        ground(&mut pc);
        stem(&mut pc, [0.0, 0.0], 0.15, 5.0, 0);
        stem(&mut pc, [5.0, 0.0], 0.2, 5.0, 1);
        let c = segment_trees(&pc, &flat_terrain(), &SegmentParams::default());
        assert_eq!(c.len(), 2);
        for cand in &c {
            let ids: std::collections::BTreeSet<u32> = cand
                .cloud
                .labels
                .iter()
                .filter_map(|l| {
                    if let Label::Stem(i) = l {
                        Some(*i)
                    } else {
                        None
                    }
                })
                .collect();
            assert_eq!(ids.len(), 1);
        }
    }

    #[test]
    fn crown_only_slice_is_empty() {
        let mut pc = PointCloud::new();
        ground(&mut pc);
        for k in 0..500 {
            let a = k as f64 * 0.1;
            pc.push(
                Vec3::new(a.cos() * 2.0, a.sin() * 2.0, 6.0 + (k % 7) as f64 * 0.1),
                Label::Crown(0),
            );
        }
        assert!(segment_trees(&pc, &flat_terrain(), &SegmentParams::default()).is_empty());
    }
}
