//! Geodesic distance field over the cost grid (exact Dijkstra, 8-connected).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::traversability::CostGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicField {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    /// Cost-to-go; `f64::INFINITY` where unreachable.
    pub distance: Vec<f64>,
    pub reachable: Vec<bool>,
    pub goal_cell: (usize, usize),
    /// Goal position in world coordinates.
    pub goal: [f64; 2],
    /// Set when the goal cell itself is impassable.
    pub goal_blocked: bool,
}

impl GeodesicField {
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

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.distance[self.index(i, j)]
    }

    pub fn is_reachable_at(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y)
            .is_some_and(|(i, j)| self.reachable[self.index(i, j)])
    }
}

pub const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    d: f64,
    k: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.k.cmp(&self.k))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Edge weight between two passable cells: `step * (base + mean endpoint cost)`.
#[inline]
pub fn edge_weight(step: f64, c0: f64, c1: f64, base: f64) -> f64 {
    step * (base + 0.5 * (c0 + c1))
}

pub fn compute_gdf(grid: &CostGrid, goal: [f64; 2], lethal: f64) -> Result<GeodesicField> {
    compute_gdf_with_base(grid, goal, lethal, 1.0)
}

/// As [`compute_gdf`], with the length term of the edge weight scaled by `base`.
pub fn compute_gdf_with_base(
    grid: &CostGrid,
    goal: [f64; 2],
    lethal: f64,
    base: f64,
) -> Result<GeodesicField> {
    let (gi, gj) = grid.cell_of(goal[0], goal[1]).ok_or(Error::OutOfExtent {
        x: goal[0],
        y: goal[1],
    })?;
    let n = grid.nx * grid.ny;
    let mut field = GeodesicField {
        origin: grid.origin,
        resolution: grid.resolution,
        nx: grid.nx,
        ny: grid.ny,
        distance: vec![f64::INFINITY; n],
        reachable: vec![false; n],
        goal_cell: (gi, gj),
        goal,
        goal_blocked: false,
    };
    let passable = |k: usize| grid.cost[k] < lethal;
    let g = grid.index(gi, gj);
    if !passable(g) {
        field.goal_blocked = true;
        return Ok(field);
    }
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    field.distance[g] = 0.0;
    heap.push(Entry { d: 0.0, k: g });
    let diag = grid.resolution * std::f64::consts::SQRT_2;
    while let Some(Entry { d, k }) = heap.pop() {
        if done[k] {
            continue;
        }
        done[k] = true;
        field.reachable[k] = true;
        let (i, j) = ((k % grid.nx) as i64, (k / grid.nx) as i64);
        for (di, dj) in NEIGHBORS {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a >= grid.nx as i64 || b >= grid.ny as i64 {
                continue;
            }
            let m = b as usize * grid.nx + a as usize;
            if done[m] || !passable(m) {
                continue;
            }
            let step = if di != 0 && dj != 0 {
                diag
            } else {
                grid.resolution
            };
            let nd = d + edge_weight(step, grid.cost[k], grid.cost[m], base);
            if nd < field.distance[m] {
                field.distance[m] = nd;
                heap.push(Entry { d: nd, k: m });
            }
        }
    }
    Ok(field)
}

/// Parent of each reachable cell in the shortest-path tree (ties broken by neighbour order).
pub fn shortest_path_tree(
    grid: &CostGrid,
    field: &GeodesicField,
    lethal: f64,
    base: f64,
) -> Vec<Option<usize>> {
    let diag = grid.resolution * std::f64::consts::SQRT_2;
    (0..grid.cost.len())
        .map(|k| {
            if !field.reachable[k] || field.distance[k] == 0.0 {
                return None;
            }
            let (i, j) = ((k % grid.nx) as i64, (k / grid.nx) as i64);
            let mut best: Option<(f64, usize)> = None;
            for (di, dj) in NEIGHBORS {
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= grid.nx as i64 || b >= grid.ny as i64 {
                    continue;
                }
                let m = b as usize * grid.nx + a as usize;
                if !field.reachable[m] || grid.cost[m] >= lethal {
                    continue;
                }
                let step = if di != 0 && dj != 0 {
                    diag
                } else {
                    grid.resolution
                };
                let via = field.distance[m] + edge_weight(step, grid.cost[k], grid.cost[m], base);
                if best.is_none_or(|(d, _)| via < d - 1e-12 * d.abs().max(1.0)) {
                    best = Some((via, m));
                }
            }
            best.map(|(_, m)| m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Textbook O(V^2) Dijkstra over an explicit adjacency list.
    fn brute_force(grid: &CostGrid, goal: usize, lethal: f64) -> Vec<f64> {
        let n = grid.cost.len();
        let mut adj = vec![Vec::new(); n];
        for k in 0..n {
            let (i, j) = (k % grid.nx, k / grid.nx);
            for m in 0..n {
                let (a, b) = (m % grid.nx, m / grid.nx);
                let (di, dj) = (a.abs_diff(i), b.abs_diff(j));
                if m == k || di > 1 || dj > 1 {
                    continue;
                }
                if grid.cost[k] >= lethal || grid.cost[m] >= lethal {
                    continue;
                }
                let len = ((di * di + dj * dj) as f64).sqrt() * grid.resolution;
                adj[k].push((m, len * (1.0 + (grid.cost[k] + grid.cost[m]) / 2.0)));
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        if grid.cost[goal] >= lethal {
            return dist;
        }
        dist[goal] = 0.0;
        loop {
            let mut u = None;
            for k in 0..n {
                if !done[k] && dist[k].is_finite() && u.is_none_or(|v: usize| dist[k] < dist[v]) {
                    u = Some(k);
                }
            }
            let Some(u) = u else { break };
            done[u] = true;
            for &(v, w) in &adj[u] {
                if dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                }
            }
        }
        dist
    }

    fn random_grid(rng: &mut impl Rng) -> CostGrid {
        let cost = (0..400)
            .map(|_| {
                if rng.random_bool(0.15) {
                    1.0
                } else {
                    rng.random_range(0.0..0.8)
                }
            })
            .collect();
        CostGrid::new([0.0, 0.0], 0.1, 20, 20, cost)
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let grid = random_grid(&mut rng);
            let goal = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let f = compute_gdf(&grid, goal, 0.9).unwrap();
            let (gi, gj) = f.goal_cell;
            let oracle = brute_force(&grid, grid.index(gi, gj), 0.9);
            for k in 0..400 {
                assert_eq!(f.distance[k], oracle[k], "cell {k}");
                assert_eq!(f.reachable[k], oracle[k].is_finite());
            }
        }
    }

    #[test]
    fn zero_cost_neighbour_is_one_resolution() {
        let grid = CostGrid::new([0.0, 0.0], 0.1, 10, 10, vec![0.0; 100]);
        let f = compute_gdf(&grid, [0.55, 0.55], 0.9).unwrap();
        assert_eq!(f.goal_cell, (5, 5));
        assert_eq!(f.value(5, 5), 0.0);
        assert!((f.value(6, 5) - 0.1).abs() < 1e-15);
        assert!((f.value(6, 6) - 0.1 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wall_disconnects() {
        let mut cost = vec![0.0; 100];
        for j in 0..10 {
            cost[j * 10 + 4] = 1.0;
        }
        let grid = CostGrid::new([0.0, 0.0], 0.1, 10, 10, cost);
        let f = compute_gdf(&grid, [0.85, 0.5], 0.9).unwrap();
        assert!(!f.reachable[grid.index(1, 5)]);
        assert!(f.reachable[grid.index(6, 5)]);
    }

    #[test]
    fn blocked_goal_flags_field() {
        let grid = CostGrid::new([0.0, 0.0], 0.1, 5, 5, vec![1.0; 25]);
        let f = compute_gdf(&grid, [0.25, 0.25], 0.9).unwrap();
        assert!(f.goal_blocked && f.reachable.iter().all(|r| !r));
        assert!(matches!(
            compute_gdf(&grid, [9.0, 0.0], 0.9),
            Err(Error::OutOfExtent { .. })
        ));
    }

    #[test]
    fn scaling_weights_with_length_term_preserves_tree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let grid = random_grid(&mut rng);
            let lambda = rng.random_range(0.2..5.0);
            let scaled = CostGrid {
                cost: grid.cost.iter().map(|c| c * lambda).collect(),
                ..grid.clone()
            };
            let f1 = compute_gdf_with_base(&grid, [1.05, 1.05], 0.9, 1.0).unwrap();
            let f2 = compute_gdf_with_base(&scaled, [1.05, 1.05], 0.9 * lambda, lambda).unwrap();
            for k in 0..400 {
                if f1.reachable[k] {
                    assert!(
                        (f2.distance[k] - lambda * f1.distance[k]).abs()
                            < 1e-9 * f2.distance[k].max(1.0)
                    );
                }
            }
            assert_eq!(
                shortest_path_tree(&grid, &f1, 0.9, 1.0),
                shortest_path_tree(&scaled, &f2, 0.9 * lambda, lambda)
            );
        }
    }
}
