use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose4;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Odometry,
    Loop,
}

/// Diagonal information (inverse variance) for a 4-DOF relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Information {
    pub xy: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Information {
    pub fn from_sigmas(xy: f64, z: f64, yaw: f64) -> Self {
        let inv = |s: f64| 1.0 / (s * s).max(1e-12);
        Self {
            xy: inv(xy),
            z: inv(z),
            yaw: inv(yaw),
        }
    }

    pub fn weights(&self) -> [f64; 4] {
        [self.xy, self.xy, self.z, self.yaw]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub pose: Pose4,
    /// Index of the scan kept for this node by the owner of the scans.
    pub scan: Option<usize>,
    pub stamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
    pub measurement: Pose4,
    pub information: Information,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last(&self) -> Option<&Node> {
        self.nodes.last()
    }

    pub fn poses(&self) -> Vec<Pose4> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    pub fn loop_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop)
    }

    /// Appends a node; from the second node on, also the odometry edge from its predecessor.
    pub fn add_node(
        &mut self,
        estimate: Pose4,
        scan: Option<usize>,
        odom_delta: Pose4,
        information: Information,
        stamp: f64,
    ) -> Result<NodeId> {
        if !estimate.is_finite() || !odom_delta.is_finite() {
            return Err(Error::NonFinitePose);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            pose: estimate,
            scan,
            stamp,
        });
        if id > 0 {
            self.edges.push(Edge {
                from: id - 1,
                to: id,
                kind: EdgeKind::Odometry,
                measurement: odom_delta,
                information,
            });
        }
        Ok(id)
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<()> {
        let n = self.nodes.len();
        if edge.from >= n {
            return Err(Error::UnknownNode(edge.from));
        }
        if edge.to >= n {
            return Err(Error::UnknownNode(edge.to));
        }
        if !edge.measurement.is_finite() {
            return Err(Error::NonFinitePose);
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Connectivity over all edges (undirected).
    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n <= 1 {
            return true;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
            if a != b {
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        (1..n).all(|i| find(&mut parent, i) == root)
    }

    /// Sum of weighted squared residuals over all edges.
    pub fn cost(&self) -> f64 {
        self.cost_with(&self.poses())
    }

    pub fn cost_with(&self, poses: &[Pose4]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let r = edge_residual(&poses[e.from], &poses[e.to], &e.measurement);
                let w = e.information.weights();
                (0..4).map(|k| w[k] * r[k] * r[k]).sum::<f64>()
            })
            .sum()
    }
}

/// Residual of a relative-pose edge: translation in the frame of `from`, then z and yaw.
pub fn edge_residual(from: &Pose4, to: &Pose4, measurement: &Pose4) -> [f64; 4] {
    let (s, c) = from.yaw.sin_cos();
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    [
        c * dx + s * dy - measurement.x,
        -s * dx + c * dy - measurement.y,
        to.z - from.z - measurement.z,
        crate::geom::wrap_angle(to.yaw - from.yaw - measurement.yaw),
    ]
}

pub fn integrate_odometry(estimate: &Pose4, delta: &Pose4) -> Pose4 {
    estimate.compose(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopClosureParams {
    /// Candidates must lie within [min, max] metres of the current estimate.
    pub radius_band: [f64; 2],
    /// Most recent nodes never considered as candidates.
    pub exclude_recent: usize,
    /// Registration succeeds only if the true separation is within this range.
    pub effective_range: f64,
    /// Keep at most this many verified candidates per query, nearest first.
    pub max_per_query: usize,
    pub translation_sigma: f64,
    pub yaw_sigma: f64,
    pub z_sigma: f64,
}

impl Default for LoopClosureParams {
    fn default() -> Self {
        Self {
            radius_band: [10.0, 15.0],
            exclude_recent: 10,
            effective_range: 15.0,
            max_per_query: 2,
            translation_sigma: 0.03,
            yaw_sigma: 0.3f64.to_radians(),
            z_sigma: 0.03,
        }
    }
}

impl LoopClosureParams {
    pub fn information(&self) -> Information {
        Information::from_sigmas(self.translation_sigma, self.z_sigma, self.yaw_sigma)
    }
}

fn bounded_normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    sigma * n.clamp(-3.0, 3.0)
}

/// Searches past nodes around `current` and appends verified loop edges.
///
/// Candidates are chosen from *estimated* positions; verification stands in for
/// scan registration and only succeeds when the *true* separation is within the
/// sensor's effective range. Accepted measurements are the true relative pose
/// perturbed by bounded noise.
pub fn detect_loop_closures(
    graph: &mut PoseGraph,
    current: NodeId,
    true_poses: &[Pose4],
    params: &LoopClosureParams,
    rng: &mut impl Rng,
) -> Vec<Edge> {
    let Some(cur) = graph.nodes.get(current).map(|n| n.pose) else {
        return Vec::new();
    };
    let horizon = current.saturating_sub(params.exclude_recent);
    let mut candidates: Vec<(f64, NodeId)> = graph.nodes[..horizon.min(graph.nodes.len())]
        .iter()
        .filter_map(|n| {
            let d = n.pose.planar_distance(&cur);
            (d >= params.radius_band[0] && d <= params.radius_band[1]).then_some((d, n.id))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let info = params.information();
    let mut accepted = Vec::new();
    for (_, id) in candidates {
        if accepted.len() >= params.max_per_query {
            break;
        }
        let (Some(ti), Some(tj)) = (true_poses.get(id), true_poses.get(current)) else {
            continue;
        };
        if ti.planar_distance(tj) > params.effective_range {
            continue;
        }
        let truth = ti.between(tj);
        let noise = Pose4::new(
            bounded_normal(rng, params.translation_sigma),
            bounded_normal(rng, params.translation_sigma),
            bounded_normal(rng, params.z_sigma),
            bounded_normal(rng, params.yaw_sigma),
        );
        let edge = Edge {
            from: id,
            to: current,
            kind: EdgeKind::Loop,
            measurement: truth.compose(&noise),
            information: info,
        };
        graph.edges.push(edge.clone());
        accepted.push(edge);
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn info() -> Information {
        Information::from_sigmas(0.05, 0.05, 0.01)
    }

    #[test]
    fn first_and_second_node() {
        let mut g = PoseGraph::new();
        assert_eq!(
            g.add_node(Pose4::IDENTITY, None, Pose4::IDENTITY, info(), 0.0)
                .unwrap(),
            0
        );
        assert!(g.edges.is_empty());
        let d = Pose4::new(2.0, 0.0, 0.0, 0.0);
        assert_eq!(g.add_node(d, None, d, info(), 4.0).unwrap(), 1);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].measurement.x, 2.0);
        assert!(g
            .add_node(Pose4::new(f64::NAN, 0.0, 0.0, 0.0), None, d, info(), 5.0)
            .is_err());
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn integrate_examples() {
        let p = Pose4::new(1.0, 2.0, 0.0, 0.4);
        assert_eq!(integrate_odometry(&p, &Pose4::IDENTITY), p);
        let a = integrate_odometry(&Pose4::IDENTITY, &Pose4::new(1.0, 0.0, 0.0, 0.0));
        let b = integrate_odometry(&a, &Pose4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!((b.x, b.y), (2.0, 0.0));
    }

    #[test]
    fn random_walk_edge_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in 1..30 {
            let mut g = PoseGraph::new();
            let mut pose = Pose4::IDENTITY;
            for k in 0..n {
                let d = Pose4::new(
                    rng.random_range(0.0..2.0),
                    rng.random_range(-1.0..1.0),
                    0.0,
                    rng.random_range(-0.5..0.5),
                );
                pose = pose.compose(&d);
                g.add_node(pose, None, d, info(), k as f64).unwrap();
            }
            assert_eq!(g.edges.len(), n - 1);
            assert!(g
                .edges
                .iter()
                .all(|e| e.kind == EdgeKind::Odometry && e.to == e.from + 1));
            assert!(g.is_connected());
        }
    }

    fn line_graph(n: usize) -> (PoseGraph, Vec<Pose4>) {
        let mut g = PoseGraph::new();
        let mut truth = Vec::new();
        for k in 0..n {
            let p = Pose4::new(2.0 * k as f64, 0.0, 0.0, 0.0);
            g.add_node(p, None, Pose4::new(2.0, 0.0, 0.0, 0.0), info(), k as f64)
                .unwrap();
            truth.push(p);
        }
        (g, truth)
    }

    #[test]
    fn straight_line_has_no_loops() {
        let (mut g, truth) = line_graph(40);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let params = LoopClosureParams::default();
        for k in 0..40 {
            // Nodes 10-15 m back along a straight line are always within the
            // recent-node exclusion window (2 m spacing, k=10 covers 20 m).
            assert!(detect_loop_closures(&mut g, k, &truth, &params, &mut rng).is_empty());
        }
    }

    #[test]
    fn verification_fails_when_truth_is_far() {
        let (mut g, mut truth) = line_graph(30);
        // Node 29 estimated 12 m from node 0, but truly 16 m away.
        g.nodes[29].pose = Pose4::new(0.0, 12.0, 0.0, 0.0);
        truth[29] = Pose4::new(0.0, 16.0, 0.0, 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let params = LoopClosureParams {
            max_per_query: 10,
            ..Default::default()
        };
        let edges = detect_loop_closures(&mut g, 29, &truth, &params, &mut rng);
        assert!(edges.iter().all(|e| e.from != 0));
        // The same geometry with an accurate estimate verifies.
        truth[29] = Pose4::new(0.0, 12.0, 0.0, 0.0);
        let edges = detect_loop_closures(&mut g, 29, &truth, &params, &mut rng);
        assert!(edges.iter().any(|e| e.from == 0));
    }
}
