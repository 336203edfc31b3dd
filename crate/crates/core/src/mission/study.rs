//! Seeded drift study: a lawnmower path estimated with and without loop closures.

use serde::{Deserialize, Serialize};

use super::config::SurveyConfig;
use crate::error::Result;
use crate::estimation::{
    detect_loop_closures, optimize_graph, Information, LoopClosureParams, OptimizeParams, PoseGraph,
};
use crate::geom::{Extent, Polygon, Pose4};
use crate::par::Execution;
use crate::rng::{substream, Stream};
use crate::sim::{measure_odometry, DriftModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftStudyParams {
    pub survey: SurveyConfig,
    pub node_spacing: f64,
    pub drift: DriftModel,
    pub loop_closure: LoopClosureParams,
    pub optimize: OptimizeParams,
}

impl Default for DriftStudyParams {
    fn default() -> Self {
        // Six 100 m rows: a path of about 650 m, the length of the longest field survey.
        Self {
            survey: SurveyConfig::rectangle(&Extent::new(0.0, 0.0, 100.0, 50.0)),
            node_spacing: 2.0,
            drift: DriftModel::default(),
            loop_closure: LoopClosureParams::default(),
            optimize: OptimizeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTrial {
    pub seed: u64,
    pub path_length: f64,
    pub nodes: usize,
    /// Final-node planar error without loop closures (m).
    pub error_without: f64,
    /// Final-node planar error with loop closures (m).
    pub error_with: f64,
    pub loop_edges: usize,
    pub optimizer_calls: usize,
    /// Calls whose final cost exceeded the initial cost.
    pub residual_increases: usize,
}

/// True node poses every `spacing` metres along the waypoint polyline.
pub fn lawnmower_poses(survey: &SurveyConfig, spacing: f64) -> Result<Vec<Pose4>> {
    let plan =
        crate::autonomy::plan_survey_with(&Polygon::new(survey.polygon.clone()), &survey.params())?;
    let pts: Vec<[f64; 2]> = plan.waypoints.iter().map(|w| [w.x, w.y]).collect();
    let mut out = Vec::new();
    let mut carry = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        if len == 0.0 {
            continue;
        }
        let yaw = (b[1] - a[1]).atan2(b[0] - a[0]);
        let mut s = carry;
        while s < len {
            let f = s / len;
            out.push(Pose4::new(
                a[0] + f * (b[0] - a[0]),
                a[1] + f * (b[1] - a[1]),
                0.0,
                yaw,
            ));
            s += spacing;
        }
        carry = s - len;
    }
    if let (Some(&last), Some(prev)) = (pts.last(), out.last().copied()) {
        out.push(Pose4::new(last[0], last[1], 0.0, prev.yaw));
    }
    Ok(out)
}

fn node_information(drift: &DriftModel, len: f64) -> Information {
    Information::from_sigmas(
        (drift.translation_noise * len.sqrt()).max(1e-3),
        (drift.z_noise * len.sqrt()).max(1e-3),
        (drift.yaw_noise * len.sqrt() + drift.yaw_bias.abs() * len).max(1e-4),
    )
}

pub fn drift_trial(seed: u64, params: &DriftStudyParams) -> Result<DriftTrial> {
    let truth = lawnmower_poses(&params.survey, params.node_spacing)?;
    let mut odom_rng = substream(seed, Stream::Odometry, 0);
    let mut reg_rng = substream(seed, Stream::Registration, 0);
    let mut open = PoseGraph::new();
    let mut closed = PoseGraph::new();
    let info0 = node_information(&params.drift, 0.0);
    open.add_node(truth[0], None, Pose4::IDENTITY, info0, 0.0)?;
    closed.add_node(truth[0], None, Pose4::IDENTITY, info0, 0.0)?;
    let mut est_open = truth[0];
    let mut path_length = 0.0;
    let (mut calls, mut increases, mut loop_edges) = (0, 0, 0);
    for (k, w) in truth.windows(2).enumerate() {
        let delta = w[0].between(&w[1]);
        let len = delta.translation().norm();
        path_length += len;
        let meas = measure_odometry(&delta, &params.drift, &mut odom_rng);
        let info = node_information(&params.drift, len);
        est_open = est_open.compose(&meas);
        open.add_node(est_open, None, meas, info, (k + 1) as f64)?;
        let prev = closed.last().expect("root present").pose;
        let id = closed.add_node(prev.compose(&meas), None, meas, info, (k + 1) as f64)?;
        let edges = detect_loop_closures(
            &mut closed,
            id,
            &truth[..=id],
            &params.loop_closure,
            &mut reg_rng,
        );
        if !edges.is_empty() {
            loop_edges += edges.len();
            let r = optimize_graph(&mut closed, &params.optimize);
            calls += 1;
            if r.final_cost > r.initial_cost {
                increases += 1;
            }
        }
    }
    let last = truth.len() - 1;
    Ok(DriftTrial {
        seed,
        path_length,
        nodes: truth.len(),
        error_without: open.nodes[last].pose.planar_distance(&truth[last]),
        error_with: closed.nodes[last].pose.planar_distance(&truth[last]),
        loop_edges,
        optimizer_calls: calls,
        residual_increases: increases,
    })
}

/// One trial per seed; trials are independent and run through `exec`.
pub fn drift_study(
    seeds: &[u64],
    params: &DriftStudyParams,
    exec: Execution,
) -> Result<Vec<DriftTrial>> {
    exec.map(seeds, |&s| drift_trial(s, params))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lawnmower_path_length() {
        let p = DriftStudyParams::default();
        let poses = lawnmower_poses(&p.survey, 2.0).unwrap();
        let len: f64 = poses.windows(2).map(|w| w[0].planar_distance(&w[1])).sum();
        assert!((len - 650.0).abs() < 1e-6, "{len}");
        assert!(poses
            .windows(2)
            .all(|w| w[0].planar_distance(&w[1]) <= 2.0 + 1e-9));
    }

    #[test]
    fn zero_drift_has_no_error() {
        let p = DriftStudyParams {
            drift: DriftModel::zero(),
            ..Default::default()
        };
        let t = drift_trial(3, &p).unwrap();
        assert!(t.error_without < 1e-9);
        assert!(t.loop_edges > 0);
    }

    #[test]
    fn study_is_deterministic_across_execution_modes() {
        let p = DriftStudyParams::default();
        let a = drift_study(&[1, 2, 3], &p, Execution::Sequential).unwrap();
        let b = drift_study(&[1, 2, 3], &p, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
