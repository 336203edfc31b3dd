//! Gridded terrain model with per-cell confidence.

use serde::{Deserialize, Serialize};

use crate::geom::Pose4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainModel {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub height: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TerrainModel {
    pub fn empty(origin: [f64; 2], resolution: f64, nx: usize, ny: usize) -> Self {
        Self {
            origin,
            resolution,
            nx,
            ny,
            height: vec![f64::NAN; nx * ny],
            weight: vec![0.0; nx * ny],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.resolution).floor();
        let j = ((y - self.origin[1]) / self.resolution).floor();
        (i >= 0.0 && j >= 0.0 && i < self.nx as f64 && j < self.ny as f64)
            .then_some((i as usize, j as usize))
    }

    pub fn is_empty(&self) -> bool {
        self.height.iter().all(|h| !h.is_finite())
    }

    fn value(&self, i: i64, j: i64) -> Option<f64> {
        if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
            return None;
        }
        Some(self.height[self.index(i as usize, j as usize)]).filter(|h| h.is_finite())
    }

    /// Bilinear height between cell centres; missing corners are skipped and, failing
    /// that, the nearest finite cell within two rings is used.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let u = (x - self.origin[0]) / self.resolution - 0.5;
        let v = (y - self.origin[1]) / self.resolution - 0.5;
        let (i0, j0) = (u.floor() as i64, v.floor() as i64);
        let (fx, fy) = (u - u.floor(), v - v.floor());
        let corners = [
            (i0, j0, (1.0 - fx) * (1.0 - fy)),
            (i0 + 1, j0, fx * (1.0 - fy)),
            (i0, j0 + 1, (1.0 - fx) * fy),
            (i0 + 1, j0 + 1, fx * fy),
        ];
        let (mut s, mut w) = (0.0, 0.0);
        for (i, j, wt) in corners {
            if let Some(h) = self.value(i, j) {
                s += wt * h;
                w += wt;
            }
        }
        if w > 1e-12 {
            return Some(s / w);
        }
        let (ci, cj) = ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64);
        for ring in 0..=2i64 {
            let mut best: Option<(f64, f64)> = None;
            for dj in -ring..=ring {
                for di in -ring..=ring {
                    if di.abs().max(dj.abs()) != ring {
                        continue;
                    }
                    if let Some(h) = self.value(ci + di, cj + dj) {
                        let c = self.cell_center((ci + di) as usize, (cj + dj) as usize);
                        let d = (c[0] - x).hypot(c[1] - y);
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, h));
                        }
                    }
                }
            }
            if let Some((_, h)) = best {
                return Some(h);
            }
        }
        None
    }

    /// Cell centres with finite height as `(x, y, z, weight)` samples.
    pub fn samples(&self) -> Vec<[f64; 4]> {
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = self.index(i, j);
                if self.height[k].is_finite() {
                    let [x, y] = self.cell_center(i, j);
                    out.push([x, y, self.height[k], self.weight[k]]);
                }
            }
        }
        out
    }

    pub fn transformed_samples(&self, pose: &Pose4) -> Vec<[f64; 4]> {
        self.samples()
            .into_iter()
            .map(|[x, y, z, w]| {
                let p = pose.transform_point(&crate::geom::Vec3::new(x, y, z));
                [p.x, p.y, p.z, w]
            })
            .collect()
    }

    /// Weighted average of `(x, y, z, weight)` samples on a grid aligned to multiples
    /// of `resolution`. Zero-weight samples only fill cells nobody else covers.
    pub fn from_samples<'a>(
        resolution: f64,
        tiles: impl IntoIterator<Item = &'a [[f64; 4]]> + Clone,
    ) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for tile in tiles.clone() {
            for s in tile {
                lo = [lo[0].min(s[0]), lo[1].min(s[1])];
                hi = [hi[0].max(s[0]), hi[1].max(s[1])];
            }
        }
        if !lo[0].is_finite() {
            return TerrainModel::empty([0.0, 0.0], resolution, 0, 0);
        }
        let origin = [
            (lo[0] / resolution).floor() * resolution,
            (lo[1] / resolution).floor() * resolution,
        ];
        let nx = ((hi[0] - origin[0]) / resolution).floor() as usize + 1;
        let ny = ((hi[1] - origin[1]) / resolution).floor() as usize + 1;
        let mut m = TerrainModel::empty(origin, resolution, nx, ny);
        let mut sum = vec![0.0; nx * ny];
        let mut fill = vec![(0.0, 0usize); nx * ny];
        for tile in tiles {
            for s in tile {
                let Some((i, j)) = m.cell_of(s[0], s[1]) else {
                    continue;
                };
                let k = m.index(i, j);
                if s[3] > 0.0 {
                    sum[k] += s[3] * s[2];
                    m.weight[k] += s[3];
                } else {
                    fill[k].0 += s[2];
                    fill[k].1 += 1;
                }
            }
        }
        for k in 0..nx * ny {
            if m.weight[k] > 0.0 {
                m.height[k] = sum[k] / m.weight[k];
            } else if fill[k].1 > 0 {
                m.height[k] = fill[k].0 / fill[k].1 as f64;
            }
        }
        m
    }

    /// Cell-wise confidence-weighted average with another model on the same grid.
    pub fn merge_aligned(&mut self, other: &TerrainModel) {
        assert_eq!((self.nx, self.ny), (other.nx, other.ny));
        for k in 0..self.height.len() {
            let (h0, w0) = (self.height[k], self.weight[k]);
            let (h1, w1) = (other.height[k], other.weight[k]);
            match (h0.is_finite(), h1.is_finite()) {
                (true, true) if w0 + w1 > 0.0 => {
                    self.height[k] = (w0 * h0 + w1 * h1) / (w0 + w1);
                    self.weight[k] = w0 + w1;
                }
                (false, true) => {
                    self.height[k] = h1;
                    self.weight[k] = w1;
                }
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_merge_example() {
        let mut a = TerrainModel::empty([0.0, 0.0], 0.5, 1, 1);
        a.height[0] = 0.0;
        a.weight[0] = 1.0;
        let mut b = a.clone();
        b.height[0] = 0.4;
        b.weight[0] = 3.0;
        a.merge_aligned(&b);
        assert!((a.height[0] - 0.3).abs() < 1e-12);
        assert_eq!(a.weight[0], 4.0);
        let tiles = [vec![[0.1, 0.1, 0.0, 1.0]], vec![[0.2, 0.2, 0.4, 3.0]]];
        let m = TerrainModel::from_samples(0.5, tiles.iter().map(|t| t.as_slice()));
        assert!((m.height[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bilinear_on_plane_is_exact() {
        let mut m = TerrainModel::empty([0.0, 0.0], 0.5, 10, 10);
        for j in 0..10 {
            for i in 0..10 {
                let [x, y] = m.cell_center(i, j);
                let k = m.index(i, j);
                m.height[k] = 0.2 * x - 0.1 * y;
                m.weight[k] = 1.0;
            }
        }
        let h = m.height_at(2.1, 3.3).unwrap();
        assert!((h - (0.42 - 0.33)).abs() < 1e-12);
        assert!(m.height_at(-3.0, -3.0).is_none());
    }
}
