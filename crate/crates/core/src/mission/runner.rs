//! Closed-loop mission runner shared by headless runs and the live server.
//!
//! One `step` is one control tick. Commands from any source (wire clients, the
//! scripted policy, the rescue policy) go through the same queue and are
//! acknowledged or rejected with an event addressed to the sender.

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use super::analyze::ingest_payload;
use super::config::{AutoPolicy, MissionConfig, ScriptedCommand, SurveyConfig};
use super::wire::{
    ClientCommand, ClientId, ClientMessage, EventMsg, GraphEdgeMsg, GraphUpdateMsg, MetricsMsg,
    ServerBody, ServerMessage, StateMsg, TerrainPatchMsg, TreeUpdateMsg, LOCAL_CLIENT,
};
use crate::analysis::{export_marteloscope, ForestInventory, MarteloscopeRow};
use crate::autonomy::{
    check_progress, compute_cost, compute_gdf, compute_velocity_command, mission_step,
    plan_survey_with, score_traversability, CostGrid, GeodesicField, LocalSignal, MissionAction,
    MissionEvent, MissionState, Phase, Progress, SurveyPlan,
};
use crate::error::{Error, Result};
use crate::estimation::{
    detect_loop_closures, optimize_graph, to_g2o, update_terrain_map, DataPayload, Edge,
    Information, PayloadAccumulator, PoseGraph, TaggedScan, TerrainMap,
};
use crate::geom::{PointCloud, Polygon, Pose4};
use crate::metrics::{
    build_report, compute_covered_area, compute_segments, interventions_csv, segments_csv,
    AutonomySegment, InterventionCause, InterventionRecord, MissionRecord, MissionReport,
    TrajectorySample,
};
use crate::par::Execution;
use crate::rng::{stream, SimRng, Stream};
use crate::sim::{
    apply_intervention, generate_world, measure_odometry, scan_lidar_with, step_robot,
    InterventionAction, RobotState, VelocityCommand, World,
};

/// Cells within this distance of the robot never count as lethal, so the planner
/// can always leave the cell it stands in.
const FOOTPRINT: f64 = 0.3;

#[derive(Debug, Clone)]
struct RescueState {
    due: f64,
}

pub struct MissionRunner {
    cfg: MissionConfig,
    world: World,
    exec: Execution,
    dt: f64,
    tick: u64,
    t: f64,
    robot: RobotState,
    prev_true: Pose4,
    est: Pose4,
    odom_rng: SimRng,
    lidar_rng: SimRng,
    loop_rng: SimRng,

    graph: PoseGraph,
    true_node_poses: Vec<Pose4>,
    since_scan: f64,
    since_node: f64,
    node_var: [f64; 3],
    node_bias: f64,
    accumulator: PayloadAccumulator,
    terrain: TerrainMap,
    loop_closures: usize,
    /// Loop edges added since the last optimisation.
    pending_closures: usize,
    last_optimized: usize,
    payload_paths: Vec<PathBuf>,

    plan: Option<SurveyPlan>,
    mission: Option<MissionState>,
    field: Option<GeodesicField>,
    field_dirty: bool,
    goal_proxy: bool,
    progress: Vec<(f64, f64)>,
    hazards: Vec<[f64; 2]>,

    inventory: ForestInventory,

    trajectory: Vec<TrajectorySample>,
    interventions: Vec<InterventionRecord>,
    open: Option<InterventionRecord>,
    trapped_since: Option<f64>,
    last_free: [f64; 2],
    rescue: Option<RescueState>,

    queue: VecDeque<(ClientId, ClientMessage)>,
    controller: Option<ClientId>,
    script: VecDeque<ScriptedCommand>,
    local_seq: u64,

    outbox: Vec<ServerMessage>,
    seq: u64,
    next_metrics: f64,
    ended: Option<String>,
}

/// Everything a finished mission leaves behind.
#[derive(Debug, Clone)]
pub struct MissionOutput {
    pub report: MissionReport,
    pub record: MissionRecord,
    pub segments: Vec<AutonomySegment>,
    pub inventory: ForestInventory,
    pub graph: PoseGraph,
    pub true_node_poses: Vec<Pose4>,
    pub plan: Option<SurveyPlan>,
    pub mission: Option<MissionState>,
    pub world: World,
    pub loop_closures: usize,
    pub payloads: usize,
}

fn odom_information(var: [f64; 3], bias: f64) -> Information {
    Information::from_sigmas(
        var[0].sqrt().max(1e-3),
        var[1].sqrt().max(1e-3),
        (var[2].sqrt() + bias.abs()).max(1e-4),
    )
}

impl MissionRunner {
    pub fn new(cfg: MissionConfig) -> Result<Self> {
        cfg.validate()?;
        let world = generate_world(&cfg.world_spec()?)?;
        Self::with_world(cfg, world)
    }

    pub fn with_world(cfg: MissionConfig, world: World) -> Result<Self> {
        cfg.validate()?;
        let plan = match &cfg.survey {
            Some(s) => Some(plan_from(s)?),
            None => None,
        };
        let [sx, sy, syaw] = match (cfg.start, &plan) {
            (Some(s), _) => s,
            (None, Some(p)) => {
                let w = &p.waypoints[0];
                [w.x, w.y, w.yaw]
            }
            (None, None) => {
                let e = &world.extent;
                [0.5 * (e.min_x + e.max_x), 0.5 * (e.min_y + e.max_y), 0.0]
            }
        };
        if !world.extent.contains(sx, sy) {
            return Err(Error::OutOfExtent { x: sx, y: sy });
        }
        let robot = RobotState::spawn(&world, &cfg.robot, sx, sy, syaw);
        let start = robot.pose4();
        let mut graph = PoseGraph::new();
        graph.add_node(
            start,
            None,
            Pose4::IDENTITY,
            odom_information([0.0; 3], 0.0),
            0.0,
        )?;
        let terrain = TerrainMap::new(cfg.terrain_map.clone(), [sx, sy]);
        let script = match &cfg.policy {
            AutoPolicy::Scripted { commands } => {
                let mut c = commands.clone();
                c.sort_by(|a, b| a.t.total_cmp(&b.t));
                c.into()
            }
            _ => VecDeque::new(),
        };
        let mut runner = Self {
            dt: 1.0 / cfg.tick_hz,
            exec: Execution::default(),
            tick: 0,
            t: 0.0,
            prev_true: start,
            est: start,
            odom_rng: stream(cfg.seed, Stream::Odometry),
            lidar_rng: stream(cfg.seed, Stream::Lidar),
            loop_rng: stream(cfg.seed, Stream::Registration),
            graph,
            true_node_poses: vec![start],
            since_scan: 0.0,
            since_node: 0.0,
            node_var: [0.0; 3],
            node_bias: 0.0,
            accumulator: PayloadAccumulator::default(),
            terrain,
            loop_closures: 0,
            pending_closures: 0,
            last_optimized: 0,
            payload_paths: Vec::new(),
            mission: plan.as_ref().map(MissionState::new),
            plan,
            field: None,
            field_dirty: true,
            goal_proxy: false,
            progress: Vec::new(),
            hazards: Vec::new(),
            inventory: ForestInventory::new(),
            trajectory: Vec::new(),
            interventions: Vec::new(),
            open: None,
            trapped_since: None,
            last_free: [sx, sy],
            rescue: None,
            queue: VecDeque::new(),
            controller: None,
            script,
            local_seq: 0,
            outbox: Vec::new(),
            seq: 0,
            next_metrics: 0.0,
            ended: None,
            robot,
            world,
            cfg,
        };
        if let Some(p) = &runner.plan {
            let waypoints = p.waypoints.clone();
            runner.event(EventMsg::Plan { waypoints });
        }
        runner.take_scan()?;
        Ok(runner)
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn config(&self) -> &MissionConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn phase(&self) -> Phase {
        self.mission.as_ref().map_or(Phase::Idle, |m| m.phase)
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn estimate(&self) -> Pose4 {
        self.est
    }

    pub fn inventory(&self) -> &ForestInventory {
        &self.inventory
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn controller(&self) -> Option<ClientId> {
        self.controller
    }

    pub fn is_finished(&self) -> bool {
        self.ended.is_some()
    }

    /// Mission running or paused: simulated time advances.
    pub fn is_active(&self) -> bool {
        matches!(self.phase(), Phase::Executing | Phase::Paused)
    }

    pub fn submit(&mut self, client: ClientId, msg: ClientMessage) {
        self.queue.push_back((client, msg));
    }

    /// Queues a command from the local operator stand-in.
    pub fn submit_local(&mut self, command: ClientCommand) {
        self.local_seq += 1;
        let seq = self.local_seq;
        self.submit(LOCAL_CLIENT, ClientMessage { seq, command });
    }

    /// Releases the commanding lock if `client` held it.
    pub fn disconnect(&mut self, client: ClientId) {
        if self.controller == Some(client) {
            self.controller = None;
        }
    }

    /// Rejects a message that could not be parsed.
    pub fn reject_malformed(&mut self, client: ClientId, seq: u64, reason: String) {
        self.emit_to(
            ServerBody::Event(EventMsg::Reject {
                client,
                command_seq: seq,
                command: "unknown".into(),
                reason,
            }),
            Some(client),
        );
    }

    pub fn drain_outbox(&mut self) -> Vec<ServerMessage> {
        std::mem::take(&mut self.outbox)
    }

    fn emit_to(&mut self, body: ServerBody, to: Option<ClientId>) {
        self.outbox.push(ServerMessage {
            seq: self.seq,
            t: self.t,
            body,
            to,
        });
        self.seq += 1;
    }

    fn event(&mut self, e: EventMsg) {
        self.emit_to(ServerBody::Event(e), None);
    }

    /// One control tick.
    pub fn step(&mut self) -> Result<()> {
        if self.ended.is_some() {
            // Late commands are still answered.
            return self.drain_commands();
        }
        self.run_policy();
        self.drain_commands()?;
        if !self.is_active() {
            if self.phase().is_terminal() {
                self.end(self.phase().to_string())?;
            } else {
                self.emit_state();
            }
            return Ok(());
        }

        let cmd = self.control()?;
        if !self.is_active() {
            // The controller finished or skipped its way out of the plan.
            return self.end(self.phase().to_string());
        }
        self.robot = step_robot(&self.world, &self.robot, cmd, self.dt, &self.cfg.robot);
        self.tick += 1;
        self.t = self.tick as f64 * self.dt;

        if self.robot.trapped {
            if self.trapped_since.is_none() {
                self.trapped_since = Some(self.t);
                self.event(EventMsg::Trapped {
                    position: [self.robot.x, self.robot.y],
                });
            }
        } else {
            self.trapped_since = None;
            self.last_free = [self.robot.x, self.robot.y];
        }

        self.estimate_step()?;
        self.trajectory.push(TrajectorySample {
            t: self.t,
            pose: self.robot.pose4(),
        });
        if self.tick % self.cfg.state_every_ticks.max(1) == 0 {
            self.emit_state();
        }
        if self.t + 1e-9 >= self.next_metrics {
            self.emit_metrics();
            self.next_metrics += self.cfg.metrics_period;
        }
        if self.t + 1e-9 >= self.cfg.max_time && self.is_active() {
            self.event(EventMsg::Warning {
                message: format!("time limit of {} s reached", self.cfg.max_time),
            });
            self.mission_event(MissionEvent::Abort)?
                .map_err(Error::Invariant)?;
            self.end("timeout".into())?;
        }
        Ok(())
    }

    /// Steps until the mission ends.
    pub fn run_to_end(
        &mut self,
        mut sink: impl FnMut(Vec<ServerMessage>) -> Result<()>,
    ) -> Result<()> {
        while !self.is_finished() {
            let before = (self.t, self.queue.len(), self.phase());
            self.step()?;
            sink(self.drain_outbox())?;
            if !self.is_finished()
                && !self.is_active()
                && self.queue.is_empty()
                && self.script.is_empty()
            {
                let after = (self.t, self.queue.len(), self.phase());
                if before == after {
                    return Err(Error::Config(
                        "mission is idle with nothing queued; start it first".into(),
                    ));
                }
            }
        }
        sink(self.drain_outbox())
    }

    fn end(&mut self, outcome: String) -> Result<()> {
        if self.ended.is_some() {
            return Ok(());
        }
        if let Some(mut rec) = self.open.take() {
            rec.end = self.t;
            rec.end_pose = self.robot.pose4();
            self.interventions.push(rec);
        }
        if self.pending_closures > 0 {
            self.optimize();
        }
        // The tail of the route becomes one last payload.
        let poses = self.graph.poses();
        let anchor = self.graph.last().expect("graph has a root").id;
        if let Some(p) = self
            .accumulator
            .flush(&poses, anchor, self.t, &self.cfg.payload)
        {
            self.process_payload(p)?;
        }
        self.emit_state();
        self.emit_metrics();
        self.event(EventMsg::MissionEnded {
            outcome: outcome.clone(),
        });
        self.ended = Some(outcome);
        Ok(())
    }

    // ----- commands -------------------------------------------------------

    fn run_policy(&mut self) {
        while self.script.front().is_some_and(|c| c.t <= self.t + 1e-9) {
            let c = self.script.pop_front().expect("front checked");
            self.submit_local(c.command);
        }
        let AutoPolicy::RescueOnTrapped {
            wait,
            push_distance,
        } = self.cfg.policy.clone()
        else {
            return;
        };
        if self.robot.trapped
            && self.phase() == Phase::Executing
            && self.open.is_none()
            && self.rescue.is_none()
        {
            self.submit_local(ClientCommand::Interrupt {
                cause: Some(InterventionCause::Trapped),
            });
            self.rescue = Some(RescueState { due: self.t + wait });
        }
        if let Some(r) = &self.rescue {
            if self.t + 1e-9 >= r.due {
                self.rescue = None;
                if self.phase() == Phase::Paused && self.open.is_some() {
                    let heading =
                        (self.last_free[1] - self.robot.y).atan2(self.last_free[0] - self.robot.x);
                    let goal = self.mission.as_ref().map_or(0, |m| m.goal);
                    self.submit_local(ClientCommand::Push {
                        distance: push_distance,
                        heading,
                    });
                    self.submit_local(ClientCommand::Resume { goal });
                }
            }
        }
    }

    fn drain_commands(&mut self) -> Result<()> {
        while let Some((client, msg)) = self.queue.pop_front() {
            let name = msg.command.name().to_string();
            // The local operator stand-in acts on site: it neither needs nor takes the lock.
            let locked = client != LOCAL_CLIENT && msg.command.needs_control();
            let res = if locked && self.controller.is_some_and(|c| c != client) {
                Err(format!(
                    "client {} holds the command lock",
                    self.controller.expect("checked")
                ))
            } else {
                if locked && self.controller.is_none() {
                    self.controller = Some(client);
                }
                self.apply_command(client, msg.command)?
            };
            let body = match res {
                Ok(()) => EventMsg::Ack {
                    client,
                    command_seq: msg.seq,
                    command: name,
                },
                Err(reason) => EventMsg::Reject {
                    client,
                    command_seq: msg.seq,
                    command: name,
                    reason,
                },
            };
            self.emit_to(ServerBody::Event(body), Some(client));
        }
        Ok(())
    }

    /// Outer error: internal failure. Inner error: rejection reason for the client.
    fn apply_command(
        &mut self,
        client: ClientId,
        cmd: ClientCommand,
    ) -> Result<std::result::Result<(), String>> {
        match cmd {
            ClientCommand::DefineSurvey(s) => {
                if self.is_active() {
                    return Ok(Err(
                        "survey can only be redefined while idle or finished".into()
                    ));
                }
                if self.phase().is_terminal() {
                    return Ok(Err("mission has ended".into()));
                }
                let plan = match plan_from(&s) {
                    Ok(p) => p,
                    Err(e) => return Ok(Err(e.to_string())),
                };
                self.mission = Some(MissionState::new(&plan));
                let waypoints = plan.waypoints.clone();
                self.plan = Some(plan);
                self.cfg.survey = Some(s);
                self.event(EventMsg::Plan { waypoints });
                Ok(Ok(()))
            }
            ClientCommand::Start {} => {
                if self.plan.is_none() {
                    return Ok(Err("no survey defined".into()));
                }
                match self.mission_event(MissionEvent::Start)? {
                    Ok(()) => {
                        self.trajectory.push(TrajectorySample {
                            t: self.t,
                            pose: self.robot.pose4(),
                        });
                        Ok(Ok(()))
                    }
                    Err(r) => Ok(Err(r)),
                }
            }
            ClientCommand::Interrupt { cause } => {
                if let Err(r) = self.mission_event(MissionEvent::OperatorInterrupt)? {
                    return Ok(Err(r));
                }
                let cause = cause.unwrap_or(if self.robot.trapped {
                    InterventionCause::Trapped
                } else {
                    InterventionCause::Safety
                });
                let pose = self.robot.pose4();
                self.open = Some(InterventionRecord {
                    start: self.t,
                    end: self.t,
                    start_pose: pose,
                    end_pose: pose,
                    cause,
                });
                self.robot.cmd = VelocityCommand::ZERO;
                self.event(EventMsg::InterventionOpened { cause, pose });
                Ok(Ok(()))
            }
            ClientCommand::Push { distance, heading } => {
                if self.open.is_none() || self.phase() != Phase::Paused {
                    return Ok(Err(
                        "push needs an open intervention; interrupt first".into()
                    ));
                }
                let was_trapped = self.robot.trapped;
                let pushed = match apply_intervention(
                    &self.world,
                    &self.robot,
                    InterventionAction::Push { distance, heading },
                    &self.cfg.robot,
                ) {
                    Ok(r) => r,
                    Err(e) => return Ok(Err(e.to_string())),
                };
                if was_trapped {
                    self.hazards.push([self.est.x, self.est.y]);
                    self.field_dirty = true;
                }
                self.robot = pushed;
                self.trapped_since = None;
                if !self.robot.trapped {
                    self.last_free = [self.robot.x, self.robot.y];
                }
                self.event(EventMsg::InterventionExtended {
                    distance,
                    heading,
                    trapped: self.robot.trapped,
                });
                Ok(Ok(()))
            }
            ClientCommand::Resume { goal } => {
                if let Err(r) = self.mission_event(MissionEvent::OperatorResume { goal })? {
                    return Ok(Err(r));
                }
                self.rescue = None;
                if let Some(mut rec) = self.open.take() {
                    rec.end = self.t;
                    rec.end_pose = self.robot.pose4();
                    self.interventions.push(rec);
                    self.event(EventMsg::InterventionClosed {
                        start: rec.start,
                        end: rec.end,
                        cause: rec.cause,
                    });
                }
                Ok(Ok(()))
            }
            ClientCommand::SetParams(p) => {
                if let Some(c) = &p.cost {
                    if let Err(e) = c.validate() {
                        return Ok(Err(e.to_string()));
                    }
                }
                if let Some(c) = p.cost {
                    self.cfg.cost = c;
                    self.field_dirty = true;
                }
                if let Some(l) = p.local {
                    self.cfg.local = l;
                    self.field_dirty = true;
                }
                if let Some(pr) = p.progress {
                    self.cfg.progress = pr;
                }
                if p.release_control && self.controller == Some(client) {
                    self.controller = None;
                }
                Ok(Ok(()))
            }
        }
    }

    /// Applies a planner event; the inner error is the rejection reason.
    fn mission_event(&mut self, ev: MissionEvent) -> Result<std::result::Result<(), String>> {
        let (Some(plan), Some(state)) = (&self.plan, &self.mission) else {
            return Ok(Err("no survey defined".into()));
        };
        let (next, action) = match mission_step(state, plan, ev, self.t) {
            Ok(x) => x,
            Err(e @ Error::IllegalTransition { .. }) => return Ok(Err(e.to_string())),
            Err(e) => return Err(e),
        };
        let from = state.phase;
        let to = next.phase;
        self.mission = Some(next);
        if from != to {
            self.event(EventMsg::Phase {
                from,
                to,
                event: ev.to_string(),
            });
        }
        match action {
            MissionAction::SendGoal { index, waypoint } => {
                self.progress.clear();
                self.field = None;
                self.field_dirty = true;
                self.event(EventMsg::Goal {
                    index,
                    position: [waypoint.x, waypoint.y],
                });
            }
            MissionAction::SafeStop => self.robot.cmd = VelocityCommand::ZERO,
            MissionAction::Finish | MissionAction::None => {}
        }
        Ok(Ok(()))
    }

    // ----- control --------------------------------------------------------

    fn goal_position(&self) -> Option<[f64; 2]> {
        let (plan, m) = (self.plan.as_ref()?, self.mission.as_ref()?);
        let w = plan.waypoints.get(m.goal)?;
        Some([w.x, w.y])
    }

    fn cost_grid(&self) -> Result<CostGrid> {
        let layer = score_traversability(&self.terrain, &self.cfg.traversability);
        let mut grid = compute_cost(&layer, &self.cfg.cost)?;
        let lethal = self.cfg.local.lethal;
        let r2 = self.cfg.hazard_radius * self.cfg.hazard_radius;
        if !self.hazards.is_empty() {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let c = grid.cell_center(i, j);
                    if self
                        .hazards
                        .iter()
                        .any(|h| (c[0] - h[0]).powi(2) + (c[1] - h[1]).powi(2) <= r2)
                    {
                        let k = grid.index(i, j);
                        grid.cost[k] = grid.cost[k].max(lethal + 1.0);
                    }
                }
            }
        }
        let res = grid.resolution;
        let reach = (FOOTPRINT / res).ceil() as i64;
        if let Some((ci, cj)) = grid.cell_of(self.est.x, self.est.y) {
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let (i, j) = (ci as i64 + di, cj as i64 + dj);
                    if i < 0 || j < 0 || i >= grid.nx as i64 || j >= grid.ny as i64 {
                        continue;
                    }
                    let c = grid.cell_center(i as usize, j as usize);
                    if (c[0] - self.est.x).hypot(c[1] - self.est.y) <= FOOTPRINT + 0.5 * res {
                        let k = grid.index(i as usize, j as usize);
                        grid.cost[k] = grid.cost[k].min(0.5 * lethal);
                    }
                }
            }
        }
        Ok(grid)
    }

    /// Goal inside the map window, or the nearest passable cell on the window's border.
    fn planning_goal(grid: &CostGrid, goal: [f64; 2], lethal: f64) -> ([f64; 2], bool) {
        if grid.cell_of(goal[0], goal[1]).is_some() {
            return (goal, false);
        }
        let res = grid.resolution;
        let lo = [grid.origin[0] + 0.5 * res, grid.origin[1] + 0.5 * res];
        let hi = [
            grid.origin[0] + (grid.nx as f64 - 0.5) * res,
            grid.origin[1] + (grid.ny as f64 - 0.5) * res,
        ];
        let clamped = [goal[0].clamp(lo[0], hi[0]), goal[1].clamp(lo[1], hi[1])];
        let (ci, cj) = grid
            .cell_of(clamped[0], clamped[1])
            .expect("clamped into the grid");
        let mut best: Option<(f64, usize, usize)> = None;
        for r in 0..grid.nx.max(grid.ny) as i64 {
            for dj in -r..=r {
                for di in -r..=r {
                    if di.abs() != r && dj.abs() != r {
                        continue;
                    }
                    let (i, j) = (ci as i64 + di, cj as i64 + dj);
                    if i < 0 || j < 0 || i >= grid.nx as i64 || j >= grid.ny as i64 {
                        continue;
                    }
                    let (i, j) = (i as usize, j as usize);
                    if grid.cost[grid.index(i, j)] >= lethal {
                        continue;
                    }
                    let c = grid.cell_center(i, j);
                    let d = (c[0] - goal[0]).hypot(c[1] - goal[1]);
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, i, j));
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        match best {
            Some((_, i, j)) => (grid.cell_center(i, j), true),
            None => (clamped, true),
        }
    }

    fn control(&mut self) -> Result<VelocityCommand> {
        if self.phase() != Phase::Executing {
            return Ok(VelocityCommand::ZERO);
        }
        let Some(goal) = self.goal_position() else {
            return Ok(VelocityCommand::ZERO);
        };
        let lethal = self.cfg.local.lethal;
        if self.field_dirty || self.field.is_none() {
            let grid = self.cost_grid()?;
            let (target, proxy) = Self::planning_goal(&grid, goal, lethal);
            self.field = Some(compute_gdf(&grid, target, lethal)?);
            self.goal_proxy = proxy;
            self.field_dirty = false;
        }
        let field = self.field.as_ref().expect("computed above");
        let goal_index = self.mission.as_ref().map_or(0, |m| m.goal);
        if !self.goal_proxy && field.goal_blocked {
            self.skip_goal(goal_index, "goal cell is not traversable")?;
            return Ok(VelocityCommand::ZERO);
        }
        let (cmd, signal) =
            compute_velocity_command(field, &self.est, &self.cfg.robot.limits, &self.cfg.local);
        if signal == LocalSignal::GoalReached {
            if self.goal_proxy {
                self.field_dirty = true;
            } else {
                self.mission_event(MissionEvent::GoalReached)?
                    .map_err(Error::Invariant)?;
                return Ok(VelocityCommand::ZERO);
            }
        }
        let dist = (goal[0] - self.est.x).hypot(goal[1] - self.est.y);
        self.progress.push((self.t, dist));
        let horizon = self.t - self.cfg.progress.window - 1.0;
        let drop = self
            .progress
            .partition_point(|s| s.0 < horizon)
            .saturating_sub(1);
        self.progress.drain(..drop);
        if check_progress(&self.progress, &self.cfg.progress, false) == Progress::Unreachable {
            self.skip_goal(goal_index, "no progress toward the goal")?;
            return Ok(VelocityCommand::ZERO);
        }
        Ok(cmd)
    }

    fn skip_goal(&mut self, index: usize, reason: &str) -> Result<()> {
        self.event(EventMsg::GoalSkipped {
            index,
            reason: reason.into(),
        });
        self.mission_event(MissionEvent::GoalUnreachable)?
            .map_err(Error::Invariant)
    }

    // ----- estimation and analysis -----------------------------------------

    fn estimate_step(&mut self) -> Result<()> {
        let true_now = self.robot.pose4();
        let delta = self.prev_true.between(&true_now);
        self.prev_true = true_now;
        let meas = measure_odometry(&delta, &self.cfg.drift, &mut self.odom_rng);
        self.est = self.est.compose(&meas);
        let len = meas.translation().norm();
        if len == 0.0 {
            return Ok(());
        }
        let d = &self.cfg.drift;
        self.node_var[0] += d.translation_noise.powi(2) * len;
        self.node_var[1] += d.z_noise.powi(2) * len;
        self.node_var[2] += d.yaw_noise.powi(2) * len;
        self.node_bias += d.yaw_bias * len;
        self.since_scan += len;
        self.since_node += len;
        self.accumulator.add_travel(len);
        if self.since_node >= self.cfg.node_spacing {
            self.add_node(true_now)?;
        }
        if self.since_scan >= self.cfg.scan_spacing {
            self.take_scan()?;
        }
        Ok(())
    }

    fn add_node(&mut self, true_now: Pose4) -> Result<()> {
        self.since_node = 0.0;
        let last = self.graph.last().expect("graph has a root").pose;
        let info = odom_information(self.node_var, self.node_bias);
        self.node_var = [0.0; 3];
        self.node_bias = 0.0;
        let id = self
            .graph
            .add_node(self.est, None, last.between(&self.est), info, self.t)?;
        self.true_node_poses.push(true_now);
        let closures = detect_loop_closures(
            &mut self.graph,
            id,
            &self.true_node_poses,
            &self.cfg.loop_closure,
            &mut self.loop_rng,
        );
        self.pending_closures += closures.len();
        let mut edges: Vec<GraphEdgeMsg> = self
            .graph
            .edges
            .iter()
            .rev()
            .take(closures.len() + 1)
            .map(edge_msg)
            .collect();
        edges.reverse();
        self.emit_to(
            ServerBody::GraphUpdate(GraphUpdateMsg {
                nodes: vec![(id, self.est)],
                edges,
                optimized: false,
            }),
            None,
        );
        if self.pending_closures > 0 && id - self.last_optimized >= self.cfg.optimize_every.max(1) {
            self.optimize();
        }
        Ok(())
    }

    /// Optimises the graph over the pending loop edges and moves everything anchored to it.
    fn optimize(&mut self) {
        let last = self.graph.last().expect("graph has a root");
        let (id, before) = (last.id, last.pose);
        let report = optimize_graph(&mut self.graph, &self.cfg.optimize);
        log::debug!(
            "optimised {} nodes in {} iterations, cost {:.3e} -> {:.3e}",
            self.graph.nodes.len(),
            report.iterations,
            report.initial_cost,
            report.final_cost
        );
        let edges = std::mem::take(&mut self.pending_closures);
        self.loop_closures += edges;
        self.last_optimized = id;
        self.est = self.graph.nodes[id]
            .pose
            .compose(&before.between(&self.est));
        let touched = self
            .inventory
            .reindex_on_loop_closure(&self.graph.poses(), &self.cfg.analysis);
        self.event(EventMsg::LoopClosure {
            node: id,
            edges,
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
        });
        let nodes = self.graph.nodes.iter().map(|n| (n.id, n.pose)).collect();
        self.emit_to(
            ServerBody::GraphUpdate(GraphUpdateMsg {
                nodes,
                edges: Vec::new(),
                optimized: true,
            }),
            None,
        );
        self.emit_tree_update(&touched);
    }

    fn take_scan(&mut self) -> Result<()> {
        self.since_scan = 0.0;
        let sensor = self.robot.sensor_pose(&self.cfg.robot);
        let raw = scan_lidar_with(
            &self.world,
            &sensor,
            &self.cfg.lidar,
            &mut self.lidar_rng,
            self.exec,
        );
        // Sensor frame to the gravity-aligned body frame; roll and pitch come from the IMU.
        let to_body = self.robot.pose4().to_iso3().inverse() * sensor;
        let mut body = PointCloud::new();
        let mut low = PointCloud::new();
        for (i, p) in raw.points.iter().enumerate() {
            let b = (to_body * nalgebra::Point3::from(*p)).coords;
            if b.z <= self.cfg.terrain_crop_height {
                low.points.push(b);
            }
            body.push(b, raw.label(i));
        }
        update_terrain_map(&mut self.terrain, &low, &self.est);
        self.field_dirty = true;
        let node = self.graph.last().expect("graph has a root");
        let offset = node.pose.between(&self.est);
        let anchor = node.id;
        self.accumulator.push(TaggedScan {
            node: anchor,
            offset,
            cloud: body,
        });
        let poses = self.graph.poses();
        if let Some(p) = self
            .accumulator
            .try_emit(&poses, anchor, self.t, &self.cfg.payload)
        {
            self.process_payload(p)?;
        }
        Ok(())
    }

    fn process_payload(&mut self, payload: DataPayload) -> Result<()> {
        let anchor_pose = self.graph.nodes[payload.anchor].pose;
        if self.cfg.write_payloads {
            if let Some(dir) = &self.cfg.output {
                let path = crate::io::write_payload(&dir.join("payloads"), &payload, anchor_pose)?;
                self.payload_paths.push(path);
            }
        }
        self.event(EventMsg::Payload {
            id: payload.id,
            anchor: payload.anchor,
            points: payload.cloud.len(),
        });
        if !self.cfg.online_analysis {
            return Ok(());
        }
        match ingest_payload(
            &mut self.inventory,
            &payload.cloud,
            payload.anchor,
            anchor_pose,
            payload.id,
            &self.cfg.analysis,
        ) {
            Ok((analysis, touched)) => {
                let cells = analysis
                    .terrain
                    .transformed_samples(&anchor_pose)
                    .into_iter()
                    .filter(|s| s[3] > 0.0)
                    .map(|s| [s[0], s[1], s[2]])
                    .collect();
                self.emit_to(
                    ServerBody::TerrainPatch(TerrainPatchMsg {
                        anchor: payload.anchor,
                        resolution: analysis.terrain.resolution,
                        cells,
                    }),
                    None,
                );
                self.emit_tree_update(&touched);
            }
            Err(e) => self.event(EventMsg::Warning {
                message: format!("payload {} not analysed: {e}", payload.id),
            }),
        }
        Ok(())
    }

    fn emit_tree_update(&mut self, touched: &BTreeSet<u32>) {
        if touched.is_empty() {
            return;
        }
        let mut trees = Vec::new();
        let mut removed = Vec::new();
        for id in touched {
            match self.inventory.trees.get(id) {
                Some(t) => trees.push(MarteloscopeRow::from_tree(t)),
                None => removed.push(*id),
            }
        }
        self.emit_to(
            ServerBody::TreeUpdate(TreeUpdateMsg {
                revision: self.inventory.revision,
                trees,
                removed,
            }),
            None,
        );
    }

    fn emit_state(&mut self) {
        let msg = self.state_msg();
        self.emit_to(ServerBody::State(msg), None);
    }

    fn state_msg(&self) -> StateMsg {
        let m = self.mission.as_ref();
        let goal = m
            .filter(|m| m.phase == Phase::Executing || m.phase == Phase::Paused)
            .map(|m| m.goal);
        StateMsg {
            phase: self.phase(),
            goal,
            goal_position: goal.and(self.goal_position()),
            pose: self.est,
            true_pose: self.robot.pose4(),
            cmd: self.robot.cmd,
            trapped: self.robot.trapped,
            intervention_open: self.open.is_some(),
            waypoints: self.plan.as_ref().map_or(0, |p| p.len()),
            reached: m.map_or(0, |m| m.reached()),
            skipped: m.map_or(0, |m| m.skipped.len()),
            controller: self.controller,
        }
    }

    fn emit_metrics(&mut self) {
        let msg = self.metrics_msg();
        self.emit_to(ServerBody::Metrics(msg), None);
    }

    fn metrics_msg(&self) -> MetricsMsg {
        let segments = compute_segments(&self.trajectory, &self.interventions).unwrap_or_default();
        let (mdbi, mtbi) = crate::metrics::compute_mdbi_mtbi(&segments);
        MetricsMsg {
            mission_time: self.trajectory.last().map_or(0.0, |s| s.t)
                - self.trajectory.first().map_or(0.0, |s| s.t),
            distance: crate::metrics::total_distance(&self.trajectory),
            interventions: self.interventions.len() + usize::from(self.open.is_some()),
            mdbi,
            mtbi,
            trees: self.inventory.len(),
            trees_with_dbh: self.inventory.reconstructed().count(),
            nodes: self.graph.len(),
            loop_closures: self.loop_closures,
            payloads: self.accumulator.emitted,
        }
    }

    /// Queues, for one client only, everything needed to rebuild the current view.
    pub fn snapshot_for(&mut self, client: ClientId) {
        let to = Some(client);
        if let Some(p) = &self.plan {
            let mut plan = p.clone();
            if let Some(m) = &self.mission {
                m.annotate(&mut plan);
            }
            self.emit_to(
                ServerBody::Event(EventMsg::Plan {
                    waypoints: plan.waypoints,
                }),
                to,
            );
        }
        let nodes = self.graph.nodes.iter().map(|n| (n.id, n.pose)).collect();
        let edges = self.graph.edges.iter().map(edge_msg).collect();
        self.emit_to(
            ServerBody::GraphUpdate(GraphUpdateMsg {
                nodes,
                edges,
                optimized: false,
            }),
            to,
        );
        if !self.inventory.is_empty() {
            let trees = crate::analysis::marteloscope_rows(&self.inventory);
            self.emit_to(
                ServerBody::TreeUpdate(TreeUpdateMsg {
                    revision: self.inventory.revision,
                    trees,
                    removed: Vec::new(),
                }),
                to,
            );
        }
        let m = self.metrics_msg();
        self.emit_to(ServerBody::Metrics(m), to);
        let st = self.state_msg();
        self.emit_to(ServerBody::State(st), to);
    }

    /// Dumps the runner state next to the outputs after a failed run.
    pub fn write_diagnostic(&self, dir: &Path, error: &Error) -> Result<PathBuf> {
        let path = dir.join("diagnostic.json");
        let dump = serde_json::json!({
            "error": error.to_string(),
            "t": self.t,
            "tick": self.tick,
            "state": self.state_msg(),
            "metrics": self.metrics_msg(),
            "hazards": self.hazards,
            "interventions": self.interventions,
        });
        crate::io::write_json(&path, &dump)?;
        Ok(path)
    }

    /// Broadcasts the current state without advancing the mission.
    pub fn heartbeat(&mut self) {
        self.emit_state();
    }

    /// Flushes pending data and assembles the mission outputs.
    pub fn finish(mut self) -> Result<MissionOutput> {
        self.finalize()
    }

    /// Ends the mission if needed and returns a copy of the outputs; the runner stays
    /// usable for serving snapshots.
    pub fn finalize(&mut self) -> Result<MissionOutput> {
        self.end("unfinished".into())?;
        let outcome = self.ended.clone().unwrap_or_default();
        let record = MissionRecord {
            name: self.cfg.name.clone(),
            trajectory: self.trajectory.clone(),
            interventions: self.interventions.clone(),
            outcome,
        };
        let segments = if record.trajectory.is_empty() {
            Vec::new()
        } else {
            compute_segments(&record.trajectory, &record.interventions)?
        };
        let area = compute_covered_area(
            &record.trajectory,
            self.cfg.lidar.effective_range,
            self.cfg.coverage_resolution,
            None,
        );
        let report = build_report(&record, &self.inventory, &segments, area);
        Ok(MissionOutput {
            report,
            record,
            segments,
            inventory: self.inventory.clone(),
            graph: self.graph.clone(),
            true_node_poses: self.true_node_poses.clone(),
            plan: self.plan.clone(),
            mission: self.mission.clone(),
            world: self.world.clone(),
            loop_closures: self.loop_closures,
            payloads: self.accumulator.emitted,
        })
    }
}

fn plan_from(s: &SurveyConfig) -> Result<SurveyPlan> {
    plan_survey_with(&Polygon::new(s.polygon.clone()), &s.params())
}

fn edge_msg(e: &Edge) -> GraphEdgeMsg {
    GraphEdgeMsg {
        from: e.from,
        to: e.to,
        kind: e.kind,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs a configured mission headless to completion. With an output directory the
/// event log, report, CSV tables, marteloscope exports, pose graph and plan are written.
pub fn run_mission(cfg: MissionConfig) -> Result<MissionOutput> {
    run_mission_with(cfg, Execution::default())
}

pub fn run_mission_with(cfg: MissionConfig, exec: Execution) -> Result<MissionOutput> {
    if cfg.survey.is_none() {
        return Err(Error::Config("a headless run needs a survey".into()));
    }
    let out_dir = cfg.output.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut runner = MissionRunner::new(cfg)?;
    runner.set_execution(exec);
    runner.submit_local(ClientCommand::Start {});
    let mut log = match &out_dir {
        Some(dir) => {
            let p = dir.join("events.jsonl");
            Some((
                std::io::BufWriter::new(std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?),
                p,
            ))
        }
        None => None,
    };
    let mut sink = |msgs: Vec<ServerMessage>| -> Result<()> {
        if let Some((w, p)) = &mut log {
            use std::io::Write;
            for m in msgs {
                writeln!(w, "{}", m.to_json()).map_err(|e| Error::io(p.as_path(), e))?;
            }
        }
        Ok(())
    };
    if let Err(e) = runner.run_to_end(&mut sink) {
        if let Some(dir) = &out_dir {
            runner.write_diagnostic(dir, &e)?;
        }
        return Err(e);
    }
    let mut output = runner.finish()?;
    if let Some((mut w, p)) = log {
        use std::io::Write;
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    if let Some(dir) = &out_dir {
        write_outputs(&mut output, dir)?;
    }
    Ok(output)
}

/// Writes the mission artefacts; export paths in the report are relative to `dir`.
pub fn write_outputs(output: &mut MissionOutput, dir: &Path) -> Result<()> {
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
    let exports = export_marteloscope(&output.inventory, dir)?;
    let mut files = std::collections::BTreeMap::new();
    files.insert("marteloscope_csv".to_string(), rel(&exports.csv));
    files.insert("marteloscope_geojson".to_string(), rel(&exports.geojson));
    files.insert("marteloscope_svg".to_string(), rel(&exports.svg));
    files.insert("inventory".to_string(), rel(&exports.inventory));

    let seg = dir.join("segments.csv");
    write_text(&seg, &segments_csv(&output.segments))?;
    files.insert("segments_csv".into(), rel(&seg));
    let iv = dir.join("interventions.csv");
    write_text(&iv, &interventions_csv(&output.record.interventions))?;
    files.insert("interventions_csv".into(), rel(&iv));
    let g2o = dir.join("pose_graph.g2o");
    write_text(&g2o, &to_g2o(&output.graph))?;
    files.insert("pose_graph".into(), rel(&g2o));
    if let Some(plan) = &output.plan {
        let mut plan = plan.clone();
        if let Some(m) = &output.mission {
            m.annotate(&mut plan);
        }
        let p = dir.join("survey_plan.json");
        write_text(&p, &plan.to_json())?;
        files.insert("survey_plan".into(), rel(&p));
    }
    let rec = dir.join("mission_record.json");
    crate::io::write_json(&rec, &output.record)?;
    files.insert("mission_record".into(), rel(&rec));
    files.insert("events".into(), "events.jsonl".into());

    output.report.exports = files;
    let rj = dir.join("report.json");
    write_text(&rj, &output.report.to_json())?;
    let rt = dir.join("report.txt");
    write_text(&rt, &output.report.to_text())?;
    Ok(())
}
