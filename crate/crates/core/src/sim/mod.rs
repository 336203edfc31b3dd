//! Ground-truth world and robot/sensor simulation.

pub mod lidar;
pub mod odometry;
pub mod robot;
pub mod world;

pub use lidar::{scan_lidar, scan_lidar_with, to_world, LidarSpec};
pub use odometry::{measure_odometry, DriftModel};
pub use robot::{
    apply_intervention, step_robot, InterventionAction, RobotParams, RobotState, VelocityCommand,
    VelocityLimits,
};
pub use world::{
    generate_world, GroundTruthTree, Heightfield, ObstacleSpec, Patch, PatchKind, StemKnot,
    TerrainSpec, TreeSpec, World, WorldSpec, BREAST_HEIGHT,
};
