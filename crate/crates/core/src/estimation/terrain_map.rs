//! Robot-centred 2.5D elevation grid.

use serde::{Deserialize, Serialize};

use crate::geom::{PointCloud, Pose4, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainMapParams {
    pub resolution: f64,
    /// Side length of the square window (m).
    pub size: f64,
    /// Points within this height above the current cell estimate refine it;
    /// points below it restart the estimate.
    pub band: f64,
    /// Exponential averaging weight of a new in-band point.
    pub alpha: f64,
    /// Recentre once the robot is this far from the window centre (m).
    pub recenter_distance: f64,
}

impl Default for TerrainMapParams {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            size: 30.0,
            band: 0.1,
            alpha: 0.3,
            recenter_distance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainMap {
    pub params: TerrainMapParams,
    /// World coordinates of the lower-left corner of cell (0, 0).
    pub origin: [f64; 2],
    pub cells: usize,
    pub elevation: Vec<f64>,
    pub known: Vec<bool>,
}

impl TerrainMap {
    pub fn new(params: TerrainMapParams, center: [f64; 2]) -> Self {
        let cells = (params.size / params.resolution).round().max(1.0) as usize;
        let half = cells as f64 * params.resolution * 0.5;
        let origin = snap_origin([center[0] - half, center[1] - half], params.resolution);
        Self {
            params,
            origin,
            cells,
            elevation: vec![f64::NAN; cells * cells],
            known: vec![false; cells * cells],
        }
    }

    pub fn resolution(&self) -> f64 {
        self.params.resolution
    }

    pub fn center(&self) -> [f64; 2] {
        let half = self.cells as f64 * self.params.resolution * 0.5;
        [self.origin[0] + half, self.origin[1] + half]
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.params.resolution).floor();
        let j = ((y - self.origin[1]) / self.params.resolution).floor();
        let n = self.cells as f64;
        (i >= 0.0 && j >= 0.0 && i < n && j < n).then_some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.params.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.params.resolution,
        ]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cells + i
    }

    pub fn elevation_at(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.index(i, j);
        self.known[k].then_some(self.elevation[k])
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|k| **k).count()
    }

    pub fn insert_point(&mut self, p: &Vec3) {
        let Some((i, j)) = self.cell_of(p.x, p.y) else {
            return;
        };
        let k = self.index(i, j);
        if !self.known[k] {
            self.known[k] = true;
            self.elevation[k] = p.z;
            return;
        }
        let e = self.elevation[k];
        if p.z < e - self.params.band {
            self.elevation[k] = p.z;
        } else if p.z <= e + self.params.band {
            self.elevation[k] = (1.0 - self.params.alpha) * e + self.params.alpha * p.z;
        }
    }

    /// Moves the window so it is centred on `center`, keeping overlapping cells.
    pub fn recenter(&mut self, center: [f64; 2]) {
        let c = self.center();
        if (c[0] - center[0]).hypot(c[1] - center[1]) < self.params.recenter_distance {
            return;
        }
        let fresh = TerrainMap::new(self.params.clone(), center);
        let di = ((fresh.origin[0] - self.origin[0]) / self.params.resolution).round() as i64;
        let dj = ((fresh.origin[1] - self.origin[1]) / self.params.resolution).round() as i64;
        let mut next = fresh;
        let n = self.cells as i64;
        for j in 0..n {
            for i in 0..n {
                let (si, sj) = (i + di, j + dj);
                if si < 0 || sj < 0 || si >= n || sj >= n {
                    continue;
                }
                let src = self.index(si as usize, sj as usize);
                let dst = next.index(i as usize, j as usize);
                next.known[dst] = self.known[src];
                next.elevation[dst] = self.elevation[src];
            }
        }
        *self = next;
    }

    pub fn clear(&mut self) {
        self.known.iter_mut().for_each(|k| *k = false);
        self.elevation.iter_mut().for_each(|e| *e = f64::NAN);
    }
}

fn snap_origin(o: [f64; 2], res: f64) -> [f64; 2] {
    [(o[0] / res).round() * res, (o[1] / res).round() * res]
}

/// Inserts a gravity-aligned body-frame cloud taken at `pose` and recentres on the robot.
pub fn update_terrain_map(map: &mut TerrainMap, cloud: &PointCloud, pose: &Pose4) {
    map.recenter([pose.x, pose.y]);
    for p in &cloud.points {
        map.insert_point(&pose.transform_point(p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_scan_is_known_at_true_height() {
        let mut m = TerrainMap::new(TerrainMapParams::default(), [0.0, 0.0]);
        let mut pc = PointCloud::new();
        for i in -50..50 {
            for j in -50..50 {
                pc.points.push(Vec3::new(
                    i as f64 * 0.1 + 0.05,
                    j as f64 * 0.1 + 0.05,
                    -0.8 + 0.003 * ((i * j) % 3) as f64,
                ));
            }
        }
        update_terrain_map(&mut m, &pc, &Pose4::new(0.0, 0.0, 0.8, 0.0));
        assert!(m.known_count() >= 9000);
        for k in 0..m.known.len() {
            if m.known[k] {
                assert!(m.elevation[k].abs() < 0.01);
            }
        }
        // A cell without points stays unknown.
        let (i, j) = m.cell_of(12.0, 12.0).unwrap();
        assert!(m.elevation_at(i, j).is_none());
    }

    #[test]
    fn trunk_column_reports_ground() {
        let mut m = TerrainMap::new(TerrainMapParams::default(), [0.0, 0.0]);
        let mut pc = PointCloud::new();
        // Trunk returns from 3 m down to the ground, top first.
        for k in (0..=30).rev() {
            pc.points.push(Vec3::new(2.05, 0.05, k as f64 * 0.1));
        }
        update_terrain_map(&mut m, &pc, &Pose4::IDENTITY);
        let (i, j) = m.cell_of(2.05, 0.05).unwrap();
        assert!(m.elevation_at(i, j).unwrap() < 0.1);
    }

    #[test]
    fn recenter_keeps_overlap() {
        let mut m = TerrainMap::new(TerrainMapParams::default(), [0.0, 0.0]);
        m.insert_point(&Vec3::new(3.05, 3.05, 0.4));
        m.recenter([5.0, 0.0]);
        let (i, j) = m.cell_of(3.05, 3.05).unwrap();
        assert_eq!(m.elevation_at(i, j), Some(0.4));
        let c = m.center();
        assert!((c[0] - 5.0).abs() <= m.resolution() && c[1].abs() <= m.resolution());
    }
}
