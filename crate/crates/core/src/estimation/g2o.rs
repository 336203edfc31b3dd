//! Plain-text export of a pose graph in the g2o SE3 quaternion format.

use std::fmt::Write as _;

use super::pose_graph::{Information, PoseGraph};
use crate::geom::Pose4;

fn quat(p: &Pose4) -> [f64; 4] {
    let h = 0.5 * p.yaw;
    [0.0, 0.0, h.sin(), h.cos()]
}

/// Upper triangle of the 6x6 information matrix; roll and pitch are pinned stiffly.
fn info_upper(info: &Information) -> Vec<f64> {
    let diag = [info.xy, info.xy, info.z, 1e6, 1e6, info.yaw];
    let mut out = Vec::with_capacity(21);
    for i in 0..6 {
        for j in i..6 {
            out.push(if i == j { diag[i] } else { 0.0 });
        }
    }
    out
}

pub fn to_g2o(graph: &PoseGraph) -> String {
    let mut s = String::new();
    for n in &graph.nodes {
        let q = quat(&n.pose);
        let _ = writeln!(
            s,
            "VERTEX_SE3:QUAT {} {} {} {} {} {} {} {}",
            n.id, n.pose.x, n.pose.y, n.pose.z, q[0], q[1], q[2], q[3]
        );
    }
    if !graph.nodes.is_empty() {
        let _ = writeln!(s, "FIX 0");
    }
    for e in &graph.edges {
        let m = &e.measurement;
        let q = quat(m);
        let _ = write!(
            s,
            "EDGE_SE3:QUAT {} {} {} {} {} {} {} {} {}",
            e.from, e.to, m.x, m.y, m.z, q[0], q[1], q[2], q[3]
        );
        for v in info_upper(&e.information) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}
