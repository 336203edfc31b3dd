//! Interventions, autonomy segments and MDBI/MTBI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionCause {
    Push,
    DeadEnd,
    Trapped,
    Safety,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub start: f64,
    pub end: f64,
    pub start_pose: Pose4,
    pub end_pose: Pose4,
    pub cause: InterventionCause,
}

impl InterventionRecord {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutonomySegment {
    pub start: f64,
    pub end: f64,
    pub distance: f64,
}

impl AutonomySegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

fn position_at(traj: &[TrajectorySample], t: f64) -> [f64; 2] {
    let k = traj.partition_point(|s| s.t <= t);
    if k == 0 {
        return [traj[0].pose.x, traj[0].pose.y];
    }
    if k == traj.len() {
        let p = &traj[k - 1].pose;
        return [p.x, p.y];
    }
    let (a, b) = (&traj[k - 1], &traj[k]);
    let u = if b.t > a.t {
        (t - a.t) / (b.t - a.t)
    } else {
        0.0
    };
    [
        a.pose.x + u * (b.pose.x - a.pose.x),
        a.pose.y + u * (b.pose.y - a.pose.y),
    ]
}

/// Planar arc length of the piecewise-linear trajectory over `[t0, t1]`.
pub fn arc_length(traj: &[TrajectorySample], t0: f64, t1: f64) -> f64 {
    if traj.is_empty() || t1 <= t0 {
        return 0.0;
    }
    let mut prev = position_at(traj, t0);
    let mut d = 0.0;
    for s in traj.iter().filter(|s| s.t > t0 && s.t < t1) {
        d += (s.pose.x - prev[0]).hypot(s.pose.y - prev[1]);
        prev = [s.pose.x, s.pose.y];
    }
    let end = position_at(traj, t1);
    d + (end[0] - prev[0]).hypot(end[1] - prev[1])
}

pub fn total_distance(traj: &[TrajectorySample]) -> f64 {
    match (traj.first(), traj.last()) {
        (Some(a), Some(b)) => arc_length(traj, a.t, b.t),
        _ => 0.0,
    }
}

pub fn validate_interventions(
    span: (f64, f64),
    interventions: &[InterventionRecord],
) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (index, r) in interventions.iter().enumerate() {
        if !(r.end >= r.start) || r.start < last {
            return Err(Error::OverlappingInterventions { index });
        }
        if r.start < span.0 || r.end > span.1 {
            return Err(Error::InterventionOutOfSpan { index });
        }
        last = r.end;
    }
    Ok(())
}

/// Maximal intervals of the mission span not covered by an intervention, with the
/// distance walked inside each.
pub fn compute_segments(
    traj: &[TrajectorySample],
    interventions: &[InterventionRecord],
) -> Result<Vec<AutonomySegment>> {
    let (Some(first), Some(last)) = (traj.first(), traj.last()) else {
        return Ok(Vec::new());
    };
    let span = (first.t, last.t);
    validate_interventions(span, interventions)?;
    let mut bounds = Vec::with_capacity(interventions.len() + 1);
    let mut cursor = span.0;
    for r in interventions {
        bounds.push((cursor, r.start));
        cursor = r.end;
    }
    bounds.push((cursor, span.1));
    Ok(bounds
        .into_iter()
        .filter(|(a, b)| b > a)
        .map(|(start, end)| AutonomySegment {
            start,
            end,
            distance: arc_length(traj, start, end),
        })
        .collect())
}

fn sorted_mean(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean distance and mean time between interventions; absent without segments.
/// Values are summed in sorted order so the result does not depend on segment order.
pub fn compute_mdbi_mtbi(segments: &[AutonomySegment]) -> (Option<f64>, Option<f64>) {
    (
        sorted_mean(segments.iter().map(|s| s.distance).collect()),
        sorted_mean(segments.iter().map(|s| s.duration()).collect()),
    )
}
