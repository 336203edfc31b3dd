//! Batch 4-DOF pose-graph optimisation (Gauss–Newton with Levenberg fallback).
//!
//! Node 0 is held fixed as the gauge. The normal equations are assembled in a
//! skyline (variable-band) layout: nodes are numbered along the trajectory and
//! loop edges only reach back a bounded number of nodes, so the envelope stays
//! narrow and a dense factorisation is never needed.

use serde::{Deserialize, Serialize};

use super::pose_graph::{edge_residual, PoseGraph};
use crate::geom::{wrap_angle, Pose4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeParams {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_tolerance: 1e-9,
            initial_lambda: 1e-6,
            max_lambda: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Whether any accepted step needed Levenberg damping.
    pub damped: bool,
    /// Whether the undamped normal equations were found singular at least once.
    pub singular: bool,
}

/// Symmetric positive-definite matrix in skyline storage (lower triangle by rows).
#[derive(Debug, Clone)]
pub struct Skyline {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    pub fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut offset = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(acc);
            acc += i - f + 1;
        }
        offset.push(acc);
        Self {
            n,
            first,
            offset,
            data: vec![0.0; acc],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offset[i] + (j - self.first[i])
    }

    /// Adds `v` at (i, j) of the symmetric matrix; (i, j) must lie in the profile.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.data[self.idx(i, i)]
    }

    /// In-place Cholesky factorisation; fill-in stays within the profile.
    /// Returns `false` if the matrix is not positive definite.
    pub fn factorize(&mut self) -> bool {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.data[self.idx(i, j)];
                let (bi, bj) = (self.offset[i] + k0 - fi, self.offset[j] + k0 - fj);
                for k in 0..(j - k0) {
                    s -= self.data[bi + k] * self.data[bj + k];
                }
                if j < i {
                    let d = self.data[self.idx(j, j)];
                    let id = self.idx(i, j);
                    self.data[id] = s / d;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    let id = self.idx(i, i);
                    self.data[id] = s.sqrt();
                }
            }
        }
        true
    }

    /// Solves `L Lᵀ x = b` after `factorize`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for i in 0..self.n {
            let fi = self.first[i];
            let mut s = y[i];
            for j in fi..i {
                s -= self.data[self.idx(i, j)] * y[j];
            }
            y[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            y[i] /= self.data[self.idx(i, i)];
            let yi = y[i];
            let fi = self.first[i];
            for j in fi..i {
                y[j] -= self.data[self.idx(i, j)] * yi;
            }
        }
        y
    }
}

/// Normal equations `H Δ = -g` for the free nodes (all but node 0), in `order` positions.
struct Linearization {
    h: Skyline,
    g: Vec<f64>,
}

fn free_adjacency(graph: &PoseGraph, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for e in &graph.edges {
        if e.from >= 1 && e.to >= 1 && e.from != e.to {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Breadth-first levels from `root` over unvisited nodes: (last level, depth).
fn bfs_last_level(adj: &[Vec<usize>], root: usize, visited: &[bool]) -> (Vec<usize>, usize) {
    let mut seen = visited.to_vec();
    seen[root] = true;
    let mut level = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &u in &level {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            return (level, depth);
        }
        level = next;
        depth += 1;
    }
}

/// Reverse Cuthill-McKee position of every free node; keeps the skyline narrow when loop
/// edges join nodes far apart in time. Entry 0 (the fixed root) is unused.
fn node_positions(graph: &PoseGraph, n: usize) -> Vec<usize> {
    let adj = free_adjacency(graph, n);
    let degree = |v: usize| adj[v].len();
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    for start in 1..n {
        if visited[start] {
            continue;
        }
        // Pseudo-peripheral root: walk to a low-degree node of the deepest level.
        let mut root = start;
        let (mut last, mut depth) = bfs_last_level(&adj, root, &visited);
        loop {
            let cand = *last
                .iter()
                .min_by_key(|&&v| (degree(v), v))
                .expect("level is non-empty");
            let (l, d) = bfs_last_level(&adj, cand, &visited);
            if d <= depth {
                break;
            }
            root = cand;
            last = l;
            depth = d;
        }
        let begin = order.len();
        visited[root] = true;
        order.push(root);
        let mut head = begin;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_unstable_by_key(|&v| (degree(v), v));
            for v in next {
                visited[v] = true;
                order.push(v);
            }
        }
    }
    order.reverse();
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    pos
}

fn linearize(graph: &PoseGraph, poses: &[Pose4], pos: &[usize]) -> Linearization {
    let n = poses.len();
    let dim = 4 * (n - 1);
    // Profile: each free node's rows reach back to the earliest position it shares an edge with.
    let mut first_pos: Vec<usize> = (0..n - 1).collect();
    for e in &graph.edges {
        if e.from >= 1 && e.to >= 1 {
            let (a, b) = (pos[e.from], pos[e.to]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first_pos[hi] = first_pos[hi].min(lo);
        }
    }
    let first: Vec<usize> = (0..dim).map(|r| 4 * first_pos[r / 4]).collect();
    let mut h = Skyline::with_profile(first);
    let mut g = vec![0.0; dim];

    for e in &graph.edges {
        let (pi, pj) = (&poses[e.from], &poses[e.to]);
        let r = edge_residual(pi, pj, &e.measurement);
        let w = e.information.weights();
        let (s, c) = pi.yaw.sin_cos();
        let dx = pj.x - pi.x;
        let dy = pj.y - pi.y;
        // Jacobians w.r.t. [x, y, z, yaw] of `from` (ji) and `to` (jj).
        let ji: [[f64; 4]; 4] = [
            [-c, -s, 0.0, -s * dx + c * dy],
            [s, -c, 0.0, -c * dx - s * dy],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, -1.0],
        ];
        let jj: [[f64; 4]; 4] = [
            [c, s, 0.0, 0.0],
            [-s, c, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let blocks = [(e.from, ji), (e.to, jj)];
        for &(na, ja) in &blocks {
            if na == 0 {
                continue;
            }
            let ra = 4 * pos[na];
            for a in 0..4 {
                let mut ga = 0.0;
                for k in 0..4 {
                    ga += ja[k][a] * w[k] * r[k];
                }
                g[ra + a] += ga;
            }
            for &(nb, jb) in &blocks {
                if nb == 0 || pos[nb] > pos[na] {
                    continue;
                }
                let rb = 4 * pos[nb];
                for a in 0..4 {
                    for b in 0..4 {
                        if nb == na && b > a {
                            continue;
                        }
                        let mut v = 0.0;
                        for k in 0..4 {
                            v += ja[k][a] * w[k] * jb[k][b];
                        }
                        if v != 0.0 {
                            h.add(ra + a, rb + b, v);
                        }
                    }
                }
            }
        }
    }
    Linearization { h, g }
}

fn apply_step(poses: &[Pose4], delta: &[f64], pos: &[usize]) -> Vec<Pose4> {
    let mut out = poses.to_vec();
    for (k, p) in out.iter_mut().enumerate().skip(1) {
        let d = &delta[4 * pos[k]..4 * pos[k] + 4];
        p.x += d[0];
        p.y += d[1];
        p.z += d[2];
        p.yaw = wrap_angle(p.yaw + d[3]);
    }
    out
}

/// Optimises node poses in place. The total weighted residual never increases.
pub fn optimize_graph(graph: &mut PoseGraph, params: &OptimizeParams) -> OptimizeReport {
    let initial_cost = graph.cost();
    let mut report = OptimizeReport {
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        damped: false,
        singular: false,
    };
    if graph.nodes.len() < 2 || graph.edges.is_empty() {
        return report;
    }
    let mut poses = graph.poses();
    let mut cost = initial_cost;
    let mut lambda = 0.0;
    let pos = node_positions(graph, poses.len());
    for iter in 0..params.max_iterations {
        report.iterations = iter + 1;
        let lin = linearize(graph, &poses, &pos);
        let neg_g: Vec<f64> = lin.g.iter().map(|v| -v).collect();
        let mut accepted = false;
        loop {
            let mut h = lin.h.clone();
            if lambda > 0.0 {
                for i in 0..h.n {
                    let d = h.diagonal(i);
                    h.add(i, i, lambda * d.max(1e-9));
                }
            }
            if !h.factorize() {
                if lambda == 0.0 {
                    report.singular = true;
                }
                lambda = if lambda == 0.0 {
                    params.initial_lambda
                } else {
                    lambda * 10.0
                };
                if lambda > params.max_lambda {
                    break;
                }
                continue;
            }
            let delta = h.solve(&neg_g);
            let trial = apply_step(&poses, &delta, &pos);
            let trial_cost = graph.cost_with(&trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                poses = trial;
                if lambda > 0.0 {
                    report.damped = true;
                }
                cost = trial_cost;
                lambda = if lambda > 0.0 {
                    (lambda / 10.0).max(params.initial_lambda)
                } else {
                    0.0
                };
                accepted = true;
                if rel < params.relative_tolerance {
                    lambda = -1.0;
                }
                break;
            }
            lambda = if lambda == 0.0 {
                params.initial_lambda
            } else {
                lambda * 10.0
            };
            if lambda > params.max_lambda {
                break;
            }
        }
        if !accepted || lambda < 0.0 || cost == 0.0 {
            break;
        }
    }
    for (node, p) in graph.nodes.iter_mut().zip(&poses) {
        node.pose = *p;
    }
    report.final_cost = cost;
    report
}
