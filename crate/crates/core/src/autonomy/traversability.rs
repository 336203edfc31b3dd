//! Geometric traversability and the per-cell cost of the local planner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TerrainMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversabilityParams {
    /// Slope hinge in degrees.
    pub slope: [f64; 2],
    /// Roughness hinge in metres (std of residuals from the local plane).
    pub roughness: [f64; 2],
    /// Step hinge in metres (max minus min in the 3x3 neighbourhood).
    pub step: [f64; 2],
}

impl Default for TraversabilityParams {
    fn default() -> Self {
        Self {
            slope: [15.0, 35.0],
            roughness: [0.03, 0.10],
            step: [0.10, 0.25],
        }
    }
}

/// Grid aligned with the terrain map it was scored from.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversabilityLayer {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    /// Score in [0, 1] for known cells, NaN otherwise.
    pub s_trav: Vec<f64>,
    pub unknown: Vec<bool>,
}

/// 1 below `lo`, 0 above `hi`, linear in between.
pub fn hinge(v: f64, [lo, hi]: [f64; 2]) -> f64 {
    if v <= lo {
        1.0
    } else if v >= hi {
        0.0
    } else {
        (hi - v) / (hi - lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFeatures {
    pub slope_deg: f64,
    pub roughness: f64,
    pub step: f64,
}

impl CellFeatures {
    pub fn score(&self, p: &TraversabilityParams) -> f64 {
        (hinge(self.slope_deg, p.slope)
            * hinge(self.roughness, p.roughness)
            * hinge(self.step, p.step))
        .clamp(0.0, 1.0)
    }
}

pub fn cell_features(map: &TerrainMap, i: usize, j: usize) -> Option<CellFeatures> {
    let n = map.cells as i64;
    let h = map.resolution();
    let z0 = map.elevation_at(i, j)?;
    let at = |di: i64, dj: i64| -> Option<f64> {
        let (a, b) = (i as i64 + di, j as i64 + dj);
        if a < 0 || b < 0 || a >= n || b >= n {
            return None;
        }
        map.elevation_at(a as usize, b as usize)
    };
    let diff = |m: Option<f64>, p: Option<f64>| match (m, p) {
        (Some(m), Some(p)) => (p - m) / (2.0 * h),
        (Some(m), None) => (z0 - m) / h,
        (None, Some(p)) => (p - z0) / h,
        (None, None) => 0.0,
    };
    let gx = diff(at(-1, 0), at(1, 0));
    let gy = diff(at(0, -1), at(0, 1));
    let slope_deg = gx.hypot(gy).atan().to_degrees();

    let (mut lo, mut hi) = (z0, z0);
    let (mut sum, mut sum2, mut count) = (0.0, 0.0, 0.0);
    for dj in -1..=1 {
        for di in -1..=1 {
            if let Some(z) = at(di, dj) {
                lo = lo.min(z);
                hi = hi.max(z);
                let r = z - (z0 + gx * di as f64 * h + gy * dj as f64 * h);
                sum += r;
                sum2 += r * r;
                count += 1.0;
            }
        }
    }
    let mean = sum / count;
    let roughness = (sum2 / count - mean * mean).max(0.0).sqrt();
    Some(CellFeatures {
        slope_deg,
        roughness,
        step: hi - lo,
    })
}

pub fn score_traversability(
    map: &TerrainMap,
    params: &TraversabilityParams,
) -> TraversabilityLayer {
    let n = map.cells;
    let mut s_trav = vec![f64::NAN; n * n];
    let mut unknown = vec![true; n * n];
    for j in 0..n {
        for i in 0..n {
            if let Some(f) = cell_features(map, i, j) {
                let k = map.index(i, j);
                s_trav[k] = f.score(params);
                unknown[k] = false;
            }
        }
    }
    TraversabilityLayer {
        origin: map.origin,
        resolution: map.resolution(),
        nx: n,
        ny: n,
        s_trav,
        unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub w_trav: f64,
    pub w_unkn: f64,
    pub s_unkn: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            w_trav: 1.0,
            w_unkn: 1.0,
            s_unkn: 0.3,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_trav >= 0.0 && self.w_unkn >= 0.0 && (0.0..=1.0).contains(&self.s_unkn)) {
            return Err(Error::Config(format!("invalid cost params {self:?}")));
        }
        Ok(())
    }

    pub fn cell_cost(&self, s_trav: Option<f64>) -> f64 {
        match s_trav {
            Some(s) => self.w_trav * (1.0 - s.clamp(0.0, 1.0)),
            None => self.w_unkn * self.s_unkn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub cost: Vec<f64>,
}

impl CostGrid {
    pub fn new(origin: [f64; 2], resolution: f64, nx: usize, ny: usize, cost: Vec<f64>) -> Self {
        assert_eq!(cost.len(), nx * ny);
        Self {
            origin,
            resolution,
            nx,
            ny,
            cost,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.resolution).floor();
        let j = ((y - self.origin[1]) / self.resolution).floor();
        (i >= 0.0 && j >= 0.0 && i < self.nx as f64 && j < self.ny as f64)
            .then_some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }
}

pub fn compute_cost(layer: &TraversabilityLayer, params: &CostParams) -> Result<CostGrid> {
    params.validate()?;
    let cost = layer
        .s_trav
        .iter()
        .zip(&layer.unknown)
        .map(|(s, u)| params.cell_cost((!u).then_some(*s)))
        .collect();
    Ok(CostGrid::new(
        layer.origin,
        layer.resolution,
        layer.nx,
        layer.ny,
        cost,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::TerrainMapParams;
    use crate::geom::Vec3;
    use proptest::prelude::*;

    fn filled(f: impl Fn(f64, f64) -> f64) -> TerrainMap {
        let params = TerrainMapParams {
            size: 6.0,
            ..Default::default()
        };
        let mut m = TerrainMap::new(params, [0.0, 0.0]);
        for j in 0..m.cells {
            for i in 0..m.cells {
                let [x, y] = m.cell_center(i, j);
                m.insert_point(&Vec3::new(x, y, f(x, y)));
            }
        }
        m
    }

    #[test]
    fn flat_is_fully_traversable() {
        let layer = score_traversability(&filled(|_, _| 0.2), &TraversabilityParams::default());
        assert!(layer.s_trav.iter().all(|s| *s == 1.0));
    }

    #[test]
    fn step_creates_blocked_band() {
        let m = filled(|x, _| if x > 0.0 { 0.5 } else { 0.0 });
        let layer = score_traversability(&m, &TraversabilityParams::default());
        for j in 0..m.cells {
            for i in 0..m.cells {
                let [x, _] = m.cell_center(i, j);
                let s = layer.s_trav[m.index(i, j)];
                if x.abs() < 0.1 {
                    assert_eq!(s, 0.0, "cell at x={x}");
                } else if x.abs() > 0.2 {
                    assert_eq!(s, 1.0);
                }
            }
        }
    }

    #[test]
    fn planar_slope_has_no_roughness() {
        let g = 20f64.to_radians().tan();
        let m = filled(|x, _| g * x);
        let f = cell_features(&m, 30, 30).unwrap();
        assert!((f.slope_deg - 20.0).abs() < 1e-6);
        assert!(f.roughness < 1e-9);
    }

    #[test]
    fn cost_examples() {
        let p = CostParams {
            w_trav: 2.0,
            w_unkn: 1.0,
            s_unkn: 0.5,
        };
        assert_eq!(p.cell_cost(Some(1.0)), 0.0);
        assert_eq!(p.cell_cost(Some(0.25)), 1.5);
        assert_eq!(p.cell_cost(None), 0.5);
        assert!(CostParams {
            s_unkn: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn unknown_cells_use_unknown_term() {
        let mut m = filled(|_, _| 0.0);
        let k = m.index(5, 5);
        m.known[k] = false;
        let layer = score_traversability(&m, &TraversabilityParams::default());
        let cost = compute_cost(&layer, &CostParams::default()).unwrap();
        assert_eq!(cost.cost[k], 0.3);
        assert_eq!(cost.cost[m.index(20, 20)], 0.0);
    }

    proptest! {
        #[test]
        fn hinge_is_monotone(a in 0.0..0.3f64, b in 0.0..0.3f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r = TraversabilityParams::default().roughness;
            prop_assert!(hinge(hi, r) <= hinge(lo, r));
            let f = |rough| CellFeatures { slope_deg: 5.0, roughness: rough, step: 0.05 }.score(&TraversabilityParams::default());
            prop_assert!(f(hi) <= f(lo));
        }
    }
}
