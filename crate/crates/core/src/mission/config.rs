//! Mission configuration and built-in presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::wire::ClientCommand;
use crate::analysis::AnalysisParams;
use crate::autonomy::{
    CostParams, LocalPlannerParams, ProgressParams, SurveyParams, TraversabilityParams,
};
use crate::error::{Error, Result};
use crate::estimation::{LoopClosureParams, OptimizeParams, PayloadParams, TerrainMapParams};
use crate::geom::{Extent, Polygon};
use crate::sim::{
    DriftModel, LidarSpec, ObstacleSpec, PatchKind, RobotParams, TerrainSpec, TreeSpec, WorldSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub polygon: Vec<[f64; 2]>,
    #[serde(default = "default_spacing")]
    pub row_spacing: f64,
    #[serde(default = "default_spacing")]
    pub waypoint_spacing: f64,
    #[serde(default)]
    pub sweep_heading: f64,
}

fn default_spacing() -> f64 {
    10.0
}

impl SurveyConfig {
    pub fn rectangle(extent: &Extent) -> Self {
        Self {
            polygon: Polygon::rectangle(extent.min_x, extent.min_y, extent.max_x, extent.max_y)
                .vertices,
            row_spacing: 10.0,
            waypoint_spacing: 10.0,
            sweep_heading: 0.0,
        }
    }

    pub fn params(&self) -> SurveyParams {
        SurveyParams {
            row_spacing: self.row_spacing,
            waypoint_spacing: self.waypoint_spacing,
            sweep_heading: self.sweep_heading,
            ..SurveyParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCommand {
    /// Simulated time at which the command is submitted (s).
    pub t: f64,
    pub command: ClientCommand,
}

/// Stand-in for the safety operator in headless runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AutoPolicy {
    Off,
    Scripted {
        commands: Vec<ScriptedCommand>,
    },
    /// Interrupt when the robot gets trapped, wait, push toward the last free
    /// position and resume the current goal.
    RescueOnTrapped {
        #[serde(default = "default_wait")]
        wait: f64,
        #[serde(default = "default_push")]
        push_distance: f64,
    },
}

fn default_wait() -> f64 {
    15.0
}

fn default_push() -> f64 {
    2.0
}

impl Default for AutoPolicy {
    fn default() -> Self {
        AutoPolicy::RescueOnTrapped {
            wait: default_wait(),
            push_distance: default_push(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub name: String,
    /// Inline world spec; ignored when `world_path` is set.
    pub world: Option<WorldSpec>,
    pub world_path: Option<PathBuf>,
    /// Survey defined up front; when absent the mission waits for a `define_survey`.
    pub survey: Option<SurveyConfig>,
    /// Start pose (x, y, yaw); defaults to the first waypoint facing along the first row.
    pub start: Option<[f64; 3]>,
    /// Seed for sensor noise, odometry drift and registration.
    pub seed: u64,
    pub tick_hz: f64,
    /// Simulated-time budget after which the mission is aborted (s).
    pub max_time: f64,
    pub scan_spacing: f64,
    pub node_spacing: f64,
    /// Pending loop edges are optimised once this many nodes have passed since the last run.
    pub optimize_every: usize,
    /// Radius around a trap site that the planner treats as lethal afterwards (m).
    pub hazard_radius: f64,
    /// Points higher than this above the body are not inserted into the terrain map (m).
    pub terrain_crop_height: f64,
    pub state_every_ticks: u64,
    pub metrics_period: f64,
    pub policy: AutoPolicy,
    pub robot: RobotParams,
    pub lidar: LidarSpec,
    pub drift: DriftModel,
    pub terrain_map: TerrainMapParams,
    pub traversability: TraversabilityParams,
    pub cost: CostParams,
    pub local: LocalPlannerParams,
    pub progress: ProgressParams,
    pub loop_closure: LoopClosureParams,
    pub optimize: OptimizeParams,
    pub payload: PayloadParams,
    pub analysis: AnalysisParams,
    pub online_analysis: bool,
    pub coverage_resolution: f64,
    pub output: Option<PathBuf>,
    /// Write every payload as PLY plus sidecar into the output directory.
    pub write_payloads: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            name: "mission".into(),
            world: None,
            world_path: None,
            survey: None,
            start: None,
            seed: 0,
            tick_hz: 10.0,
            max_time: 3600.0,
            scan_spacing: 1.0,
            node_spacing: 2.0,
            optimize_every: 5,
            hazard_radius: 2.0,
            terrain_crop_height: 1.0,
            state_every_ticks: 1,
            metrics_period: 1.0,
            policy: AutoPolicy::default(),
            robot: RobotParams::default(),
            lidar: LidarSpec::default(),
            drift: DriftModel::default(),
            terrain_map: TerrainMapParams::default(),
            traversability: TraversabilityParams::default(),
            cost: CostParams::default(),
            local: LocalPlannerParams::default(),
            progress: ProgressParams::default(),
            loop_closure: LoopClosureParams::default(),
            optimize: OptimizeParams::default(),
            payload: PayloadParams::default(),
            analysis: AnalysisParams::default(),
            online_analysis: true,
            coverage_resolution: crate::metrics::DEFAULT_COVERAGE_RESOLUTION,
            output: None,
            write_payloads: false,
        }
    }
}

impl MissionConfig {
    pub fn from_json_str(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Loads a config file; a relative `world_path` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: MissionConfig = crate::io::read_json(path)?;
        if let Some(wp) = &cfg.world_path {
            if wp.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.world_path = Some(dir.join(wp));
                }
            }
        }
        Ok(cfg)
    }

    pub fn world_spec(&self) -> Result<WorldSpec> {
        match (&self.world_path, &self.world) {
            (Some(p), _) => crate::io::read_json(p),
            (None, Some(w)) => Ok(w.clone()),
            (None, None) => Err(Error::Config("no world spec given".into())),
        }
    }

    /// Pre-flight checks that do not need the world.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tick_hz > 0.0 && self.tick_hz.is_finite()) {
            return bad(format!("tick rate must be positive, got {}", self.tick_hz));
        }
        if !(self.max_time > 0.0) {
            return bad("max_time must be positive".into());
        }
        if !(self.scan_spacing > 0.0 && self.node_spacing > 0.0) {
            return bad("scan and node spacing must be positive".into());
        }
        if let Some(p) = &self.world_path {
            if !p.exists() {
                return bad(format!("world spec {} does not exist", p.display()));
            }
        }
        if self.world.is_none() && self.world_path.is_none() {
            return bad("no world spec given".into());
        }
        if !self.drift.is_valid() {
            return bad("drift model must be finite and non-negative".into());
        }
        self.lidar.validate().map_err(Error::Config)?;
        self.cost.validate()?;
        self.analysis.cloth.validate()?;
        if let AutoPolicy::RescueOnTrapped {
            wait,
            push_distance,
        } = &self.policy
        {
            if !(*wait >= 0.0 && *push_distance > 0.0 && *push_distance <= self.robot.max_push) {
                return bad(
                    "rescue policy needs a non-negative wait and a push within the push limit"
                        .into(),
                );
            }
        }
        Ok(())
    }
}

/// Forest plot of `trees` trees with a few bushes and soft-ground patches.
pub fn forest_world(extent: Extent, trees: usize, seed: u64) -> WorldSpec {
    WorldSpec {
        extent,
        terrain: TerrainSpec::default(),
        trees: TreeSpec {
            count: trees,
            ..TreeSpec::default()
        },
        obstacles: vec![
            ObstacleSpec {
                count: 2,
                radius: [1.0, 1.5],
                kind: PatchKind::Bush,
            },
            ObstacleSpec {
                count: 1,
                radius: [0.8, 1.2],
                kind: PatchKind::Damp,
            },
        ],
        bush_height: 0.6,
        seed,
    }
}

/// Desk-scale counterpart of the largest field mission: 100 trees on 125 × 30 m.
pub fn m7_config(seed: u64) -> MissionConfig {
    let extent = Extent::new(0.0, 0.0, 125.0, 30.0);
    MissionConfig {
        name: "M7".into(),
        world: Some(forest_world(extent, 100, seed)),
        survey: Some(SurveyConfig::rectangle(&extent)),
        seed,
        max_time: 1800.0,
        ..MissionConfig::default()
    }
}

/// Smaller forest plot at the scale of the shorter field missions (40 × 25 m).
pub fn m1_config(seed: u64) -> MissionConfig {
    let extent = Extent::new(0.0, 0.0, 40.0, 25.0);
    MissionConfig {
        name: "M1".into(),
        world: Some(forest_world(extent, 30, seed)),
        survey: Some(SurveyConfig::rectangle(&extent)),
        seed,
        max_time: 1200.0,
        ..MissionConfig::default()
    }
}

/// Obstacle-free, tree-free gentle terrain for the pure coverage rate.
pub fn clean_world_config(seed: u64) -> MissionConfig {
    let extent = Extent::new(0.0, 0.0, 200.0, 100.0);
    MissionConfig {
        name: "clean".into(),
        world: Some(WorldSpec {
            extent,
            terrain: TerrainSpec::default(),
            trees: TreeSpec::default(),
            obstacles: Vec::new(),
            bush_height: 0.6,
            seed,
        }),
        survey: Some(SurveyConfig::rectangle(&extent)),
        seed,
        max_time: 7200.0,
        online_analysis: false,
        ..MissionConfig::default()
    }
}
