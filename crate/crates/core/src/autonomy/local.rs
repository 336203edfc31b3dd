//! Velocity commands from the distance field, and progress monitoring.

use serde::{Deserialize, Serialize};

use super::gdf::{GeodesicField, NEIGHBORS};
use crate::geom::{wrap_angle, Pose4};
use crate::sim::{VelocityCommand, VelocityLimits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalPlannerParams {
    pub goal_radius: f64,
    /// Forward speed ramps down linearly inside this distance to the goal.
    pub slow_radius: f64,
    pub yaw_gain: f64,
    pub lethal: f64,
}

impl Default for LocalPlannerParams {
    fn default() -> Self {
        Self {
            goal_radius: 0.3,
            slow_radius: 1.0,
            yaw_gain: 1.5,
            lethal: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSignal {
    Moving,
    GoalReached,
    LocalMinimum,
}

/// Central-difference gradient at a cell centre, one-sided next to unreachable cells.
fn cell_gradient(field: &GeodesicField, i: usize, j: usize) -> Option<[f64; 2]> {
    let here = field.value(i, j);
    if !here.is_finite() {
        return None;
    }
    let h = field.resolution;
    let at = |a: i64, b: i64| -> Option<f64> {
        if a < 0 || b < 0 || a >= field.nx as i64 || b >= field.ny as i64 {
            return None;
        }
        Some(field.value(a as usize, b as usize)).filter(|d| d.is_finite())
    };
    let diff = |m: Option<f64>, p: Option<f64>| match (m, p) {
        (Some(m), Some(p)) => (p - m) / (2.0 * h),
        (Some(m), None) => (here - m) / h,
        (None, Some(p)) => (p - here) / h,
        (None, None) => 0.0,
    };
    let (i, j) = (i as i64, j as i64);
    Some([
        diff(at(i - 1, j), at(i + 1, j)),
        diff(at(i, j - 1), at(i, j + 1)),
    ])
}

/// Negative field gradient at `(x, y)`, bilinearly interpolated from cell-centre gradients.
/// Falls back to the steepest reachable neighbour when the stencil touches unreachable cells.
pub fn descent_direction(field: &GeodesicField, x: f64, y: f64) -> Option<[f64; 2]> {
    let (ci, cj) = field.cell_of(x, y)?;
    if !field.reachable[field.index(ci, cj)] {
        return None;
    }
    let h = field.resolution;
    let u = (x - field.origin[0]) / h - 0.5;
    let v = (y - field.origin[1]) / h - 0.5;
    let (i0, j0) = (u.floor(), v.floor());
    let (fx, fy) = (u - i0, v - j0);
    let inside = i0 >= 0.0 && j0 >= 0.0 && i0 + 1.0 < field.nx as f64 && j0 + 1.0 < field.ny as f64;
    if inside {
        let (i0, j0) = (i0 as usize, j0 as usize);
        let q = [
            cell_gradient(field, i0, j0),
            cell_gradient(field, i0 + 1, j0),
            cell_gradient(field, i0, j0 + 1),
            cell_gradient(field, i0 + 1, j0 + 1),
        ];
        if let [Some(a), Some(b), Some(c), Some(d)] = q {
            let w = [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ];
            let gx = w[0] * a[0] + w[1] * b[0] + w[2] * c[0] + w[3] * d[0];
            let gy = w[0] * a[1] + w[1] * b[1] + w[2] * c[1] + w[3] * d[1];
            let norm = gx.hypot(gy);
            if norm > 1e-9 {
                return Some([-gx / norm, -gy / norm]);
            }
        }
    }
    let here = field.value(ci, cj);
    let mut best: Option<(f64, [f64; 2])> = None;
    for (di, dj) in NEIGHBORS {
        let (a, b) = (ci as i64 + di, cj as i64 + dj);
        if a < 0 || b < 0 || a >= field.nx as i64 || b >= field.ny as i64 {
            continue;
        }
        let d = field.value(a as usize, b as usize);
        if d < here && best.is_none_or(|(bd, _)| d < bd) {
            let l = ((di * di + dj * dj) as f64).sqrt();
            best = Some((d, [di as f64 / l, dj as f64 / l]));
        }
    }
    best.map(|(_, dir)| dir)
}

pub fn compute_velocity_command(
    field: &GeodesicField,
    pose: &Pose4,
    limits: &VelocityLimits,
    params: &LocalPlannerParams,
) -> (VelocityCommand, LocalSignal) {
    let to_goal = [field.goal[0] - pose.x, field.goal[1] - pose.y];
    let dist = to_goal[0].hypot(to_goal[1]);
    if dist <= params.goal_radius {
        return (VelocityCommand::ZERO, LocalSignal::GoalReached);
    }
    if field.goal_blocked || !field.is_reachable_at(pose.x, pose.y) {
        return (VelocityCommand::ZERO, LocalSignal::LocalMinimum);
    }
    let dir = if field.cell_of(pose.x, pose.y) == Some(field.goal_cell) {
        Some([to_goal[0] / dist, to_goal[1] / dist])
    } else {
        descent_direction(field, pose.x, pose.y)
    };
    let Some(dir) = dir else {
        return (VelocityCommand::ZERO, LocalSignal::LocalMinimum);
    };
    let err = wrap_angle(dir[1].atan2(dir[0]) - pose.yaw);
    let approach = (dist / params.slow_radius).min(1.0);
    let align = err.cos().max(0.0);
    let cmd = VelocityCommand {
        vx: limits.max_vx * align * approach,
        vy: limits.max_vy * err.sin() * align * approach,
        yaw_rate: params.yaw_gain * err,
    };
    (limits.clamp(cmd), LocalSignal::Moving)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Progress {
    Reachable,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgressParams {
    pub window: f64,
    pub min_progress: f64,
}

impl Default for ProgressParams {
    fn default() -> Self {
        Self {
            window: 15.0,
            min_progress: 0.5,
        }
    }
}

/// `history` holds `(time, distance to goal)` samples in time order.
/// Reports reachable until the history spans a full window.
pub fn check_progress(
    history: &[(f64, f64)],
    params: &ProgressParams,
    goal_unreachable: bool,
) -> Progress {
    if goal_unreachable {
        return Progress::Unreachable;
    }
    let Some(&(t_last, d_last)) = history.last() else {
        return Progress::Reachable;
    };
    let cutoff = t_last - params.window;
    if history[0].0 > cutoff + 1e-9 {
        return Progress::Reachable;
    }
    // Latest sample at or before the window start.
    let start = history
        .iter()
        .rev()
        .find(|(t, _)| *t <= cutoff + 1e-9)
        .map(|s| s.1)
        .unwrap_or(history[0].1);
    if start - d_last < params.min_progress {
        Progress::Unreachable
    } else {
        Progress::Reachable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonomy::gdf::compute_gdf;
    use crate::autonomy::traversability::CostGrid;
    use proptest::prelude::*;

    fn free_field(goal: [f64; 2]) -> GeodesicField {
        let grid = CostGrid::new([-10.0, -10.0], 0.1, 200, 200, vec![0.0; 40_000]);
        compute_gdf(&grid, goal, 0.9).unwrap()
    }

    #[test]
    fn at_goal_reports_reached() {
        let f = free_field([1.0, 1.0]);
        let (c, s) = compute_velocity_command(
            &f,
            &Pose4::new(1.05, 1.0, 0.0, 0.3),
            &VelocityLimits::default(),
            &LocalPlannerParams::default(),
        );
        assert_eq!((c, s), (VelocityCommand::ZERO, LocalSignal::GoalReached));
    }

    #[test]
    fn straight_ahead_is_full_speed() {
        let f = free_field([5.05, 0.05]);
        let lim = VelocityLimits::default();
        let (c, s) = compute_velocity_command(
            &f,
            &Pose4::new(0.05, 0.05, 0.0, 0.0),
            &lim,
            &LocalPlannerParams::default(),
        );
        assert_eq!(s, LocalSignal::Moving);
        assert!((c.vx - lim.max_vx).abs() < 1e-9);
        assert!(c.yaw_rate.abs() < 1e-9 && c.vy.abs() < 1e-9);
    }

    #[test]
    fn facing_away_turns_in_place() {
        let f = free_field([5.05, 0.05]);
        let lim = VelocityLimits::default();
        let (c, _) = compute_velocity_command(
            &f,
            &Pose4::new(0.05, 0.05, 0.0, std::f64::consts::PI - 1e-3),
            &lim,
            &LocalPlannerParams::default(),
        );
        assert!((c.yaw_rate.abs() - lim.max_yaw_rate).abs() < 1e-12);
        assert!(c.vx.abs() < 1e-9);
    }

    #[test]
    fn unreachable_cell_is_local_minimum() {
        let mut cost = vec![0.0; 100];
        for j in 0..10 {
            cost[j * 10 + 4] = 1.0;
        }
        let grid = CostGrid::new([0.0, 0.0], 0.1, 10, 10, cost);
        let f = compute_gdf(&grid, [0.85, 0.5], 0.9).unwrap();
        let (c, s) = compute_velocity_command(
            &f,
            &Pose4::new(0.15, 0.5, 0.0, 0.0),
            &VelocityLimits::default(),
            &LocalPlannerParams::default(),
        );
        assert_eq!((c, s), (VelocityCommand::ZERO, LocalSignal::LocalMinimum));
    }

    #[test]
    fn progress_examples() {
        let p = ProgressParams::default();
        let approach: Vec<_> = (0..=15)
            .map(|k| (k as f64, 5.0 - k as f64 / 15.0))
            .collect();
        assert_eq!(check_progress(&approach, &p, false), Progress::Reachable);
        let wobble: Vec<_> = (0..=15)
            .map(|k| {
                (
                    k as f64,
                    5.0 + 0.3 * (k % 2) as f64 - 0.1 * (k == 15) as u8 as f64,
                )
            })
            .collect();
        assert_eq!(check_progress(&wobble, &p, false), Progress::Unreachable);
        assert_eq!(
            check_progress(&approach[..3], &p, true),
            Progress::Unreachable
        );
        assert_eq!(
            check_progress(&approach[..3], &p, false),
            Progress::Reachable
        );
    }

    proptest! {
        #[test]
        fn commands_within_limits(x in -9.0..9.0f64, y in -9.0..9.0f64, yaw in -3.2..3.2f64) {
            let f = free_field([2.0, -3.0]);
            let lim = VelocityLimits::default();
            let (c, _) = compute_velocity_command(&f, &Pose4::new(x, y, 0.0, yaw), &lim, &LocalPlannerParams::default());
            prop_assert!(lim.contains(&c));
        }
    }
}
