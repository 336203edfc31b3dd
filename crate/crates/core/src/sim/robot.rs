//! Point-robot kinematics over the terrain, plus operator interventions.

use nalgebra::{Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Iso3, Pose4, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand {
        vx: 0.0,
        vy: 0.0,
        yaw_rate: 0.0,
    };

    pub fn new(vx: f64, vy: f64, yaw_rate: f64) -> Self {
        Self { vx, vy, yaw_rate }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.yaw_rate == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VelocityLimits {
    pub max_vx: f64,
    pub max_vy: f64,
    pub max_yaw_rate: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            max_vx: 0.5,
            max_vy: 0.2,
            max_yaw_rate: 0.6,
        }
    }
}

impl VelocityLimits {
    pub fn clamp(&self, cmd: VelocityCommand) -> VelocityCommand {
        let c = |v: f64, m: f64| if v.is_finite() { v.clamp(-m, m) } else { 0.0 };
        VelocityCommand {
            vx: c(cmd.vx, self.max_vx),
            vy: c(cmd.vy, self.max_vy),
            yaw_rate: c(cmd.yaw_rate, self.max_yaw_rate),
        }
    }

    pub fn contains(&self, cmd: &VelocityCommand) -> bool {
        cmd.vx.abs() <= self.max_vx + 1e-12
            && cmd.vy.abs() <= self.max_vy + 1e-12
            && cmd.yaw_rate.abs() <= self.max_yaw_rate + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    pub hip_height: f64,
    /// LiDAR height above the body origin, along the body z axis.
    pub lidar_mount: f64,
    pub limits: VelocityLimits,
    /// Speed multiplier while inside a bush patch.
    pub bush_speed_factor: f64,
    /// Largest displacement a single operator push may apply (m).
    pub max_push: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            hip_height: 0.5,
            lidar_mount: 0.3,
            limits: VelocityLimits::default(),
            bush_speed_factor: 0.3,
            max_push: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
    pub cmd: VelocityCommand,
    pub trapped: bool,
    pub clock: f64,
}

impl RobotState {
    /// Robot standing on the terrain at (x, y) with heading `yaw`.
    pub fn spawn(world: &World, params: &RobotParams, x: f64, y: f64, yaw: f64) -> Self {
        let mut s = RobotState {
            x,
            y,
            z: 0.0,
            yaw: wrap_angle(yaw),
            roll: 0.0,
            pitch: 0.0,
            cmd: VelocityCommand::ZERO,
            trapped: false,
            clock: 0.0,
        };
        s.snap_to_terrain(world, params);
        s.trapped = world.in_damp(x, y);
        s
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    pub fn pose(&self) -> Iso3 {
        Iso3::from_parts(Translation3::new(self.x, self.y, self.z), self.rotation())
    }

    pub fn pose4(&self) -> Pose4 {
        Pose4::new(self.x, self.y, self.z, self.yaw)
    }

    pub fn sensor_pose(&self, params: &RobotParams) -> Iso3 {
        let rot = self.rotation();
        let t = Vec3::new(self.x, self.y, self.z) + rot * Vec3::new(0.0, 0.0, params.lidar_mount);
        Iso3::from_parts(Translation3::from(t), rot)
    }

    /// Sets z to terrain plus hip height and aligns roll/pitch with the terrain normal.
    pub fn snap_to_terrain(&mut self, world: &World, params: &RobotParams) {
        self.z = world.terrain_height(self.x, self.y) + params.hip_height;
        let (hx, hy) = world.heightfield.gradient(self.x, self.y);
        let (s, c) = self.yaw.sin_cos();
        let normal = Vec3::new(-hx, -hy, 1.0).normalize();
        let forward = Vec3::new(c, s, hx * c + hy * s).normalize();
        let left = normal.cross(&forward);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[forward, left, normal]));
        let (roll, pitch, _) = rot.euler_angles();
        self.roll = roll;
        self.pitch = pitch;
    }
}

/// Advances the robot by `dt` under `cmd` (clamped to the limits).
pub fn step_robot(
    world: &World,
    state: &RobotState,
    cmd: VelocityCommand,
    dt: f64,
    params: &RobotParams,
) -> RobotState {
    let mut next = state.clone();
    next.clock += dt;
    let cmd = params.limits.clamp(cmd);
    next.cmd = cmd;
    if state.trapped || dt <= 0.0 {
        next.cmd = VelocityCommand::ZERO;
        return next;
    }
    let factor = if world.in_bush(state.x, state.y) {
        params.bush_speed_factor
    } else {
        1.0
    };
    let (s, c) = state.yaw.sin_cos();
    let (vx, vy) = (cmd.vx * factor, cmd.vy * factor);
    next.x = state.x + (vx * c - vy * s) * dt;
    next.y = state.y + (vx * s + vy * c) * dt;
    next.yaw = wrap_angle(state.yaw + cmd.yaw_rate * dt);
    next.snap_to_terrain(world, params);
    if world.in_damp(next.x, next.y) {
        next.trapped = true;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum InterventionAction {
    /// Displace the robot by `distance` metres along world heading `heading`.
    Push {
        distance: f64,
        heading: f64,
    },
    Release,
}

/// Applies a safety-operator action. On error the caller keeps the old state.
pub fn apply_intervention(
    world: &World,
    state: &RobotState,
    action: InterventionAction,
    params: &RobotParams,
) -> Result<RobotState> {
    let mut next = state.clone();
    match action {
        InterventionAction::Push { distance, heading } => {
            if !(distance.is_finite() && heading.is_finite()) {
                return Err(Error::NonFinitePose);
            }
            if distance.abs() > params.max_push {
                return Err(Error::PushTooLarge {
                    requested: distance.abs(),
                    max: params.max_push,
                });
            }
            let x = state.x + distance * heading.cos();
            let y = state.y + distance * heading.sin();
            if !world.extent.contains(x, y) {
                return Err(Error::OutOfExtent { x, y });
            }
            next.x = x;
            next.y = y;
            next.snap_to_terrain(world, params);
            next.trapped = world.in_damp(x, y);
        }
        InterventionAction::Release => {
            next.trapped = false;
        }
    }
    next.cmd = VelocityCommand::ZERO;
    Ok(next)
}
