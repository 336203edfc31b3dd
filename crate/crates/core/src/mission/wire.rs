//! Wire protocol: JSON envelopes `{seq, type, t, payload}` over WebSocket text frames.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::SurveyConfig;
use crate::analysis::MarteloscopeRow;
use crate::autonomy::{CostParams, LocalPlannerParams, Phase, ProgressParams, Waypoint};
use crate::estimation::EdgeKind;
use crate::geom::Pose4;
use crate::metrics::InterventionCause;
use crate::sim::VelocityCommand;

pub type ClientId = u32;

/// Client used for scripted and auto-policy commands in headless runs.
pub const LOCAL_CLIENT: ClientId = 0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamsUpdate {
    pub cost: Option<CostParams>,
    pub local: Option<LocalPlannerParams>,
    pub progress: Option<ProgressParams>,
    /// Give up the commanding-client lock.
    pub release_control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientCommand {
    DefineSurvey(SurveyConfig),
    Start {},
    Interrupt {
        #[serde(default)]
        cause: Option<InterventionCause>,
    },
    Resume {
        goal: usize,
    },
    /// Displace the robot by `distance` metres along world heading `heading` (rad).
    Push {
        distance: f64,
        heading: f64,
    },
    SetParams(ParamsUpdate),
}

impl ClientCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ClientCommand::DefineSurvey(_) => "define_survey",
            ClientCommand::Start {} => "start",
            ClientCommand::Interrupt { .. } => "interrupt",
            ClientCommand::Resume { .. } => "resume",
            ClientCommand::Push { .. } => "push",
            ClientCommand::SetParams(_) => "set_params",
        }
    }

    /// Commands that change the mission need the commanding-client lock.
    pub fn needs_control(&self) -> bool {
        !matches!(self, ClientCommand::SetParams(p) if p.release_control && p.cost.is_none() && p.local.is_none() && p.progress.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub command: ClientCommand,
}

/// Parses a client frame. On failure returns the sequence number (if readable) and a reason.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, (u64, String)> {
    let v: Value = serde_json::from_str(text).map_err(|e| (0, format!("malformed JSON: {e}")))?;
    let seq = v.get("seq").and_then(Value::as_u64).unwrap_or(0);
    let Some(obj) = v.as_object() else {
        return Err((seq, "message must be a JSON object".into()));
    };
    let Some(kind) = obj.get("type").and_then(Value::as_str) else {
        return Err((seq, "missing message type".into()));
    };
    let payload = match obj.get("payload") {
        None | Some(Value::Null) => Value::Object(Default::default()),
        Some(p) => p.clone(),
    };
    let tagged = serde_json::json!({"type": kind, "payload": payload});
    let command: ClientCommand = serde_json::from_value(tagged)
        .map_err(|e| (seq, format!("invalid {kind} command: {e}")))?;
    Ok(ClientMessage { seq, command })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub phase: Phase,
    pub goal: Option<usize>,
    pub goal_position: Option<[f64; 2]>,
    /// Estimated pose in the map frame.
    pub pose: Pose4,
    /// Simulator ground truth, for display only.
    pub true_pose: Pose4,
    pub cmd: VelocityCommand,
    pub trapped: bool,
    pub intervention_open: bool,
    pub waypoints: usize,
    pub reached: usize,
    pub skipped: usize,
    pub controller: Option<ClientId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainPatchMsg {
    pub anchor: usize,
    pub resolution: f64,
    /// Known cells as (x, y, z) in the map frame.
    pub cells: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdgeMsg {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphUpdateMsg {
    /// New or moved nodes as (id, pose).
    pub nodes: Vec<(usize, Pose4)>,
    pub edges: Vec<GraphEdgeMsg>,
    pub optimized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeUpdateMsg {
    pub revision: u64,
    pub trees: Vec<MarteloscopeRow>,
    pub removed: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsMsg {
    pub mission_time: f64,
    pub distance: f64,
    pub interventions: usize,
    pub mdbi: Option<f64>,
    pub mtbi: Option<f64>,
    pub trees: usize,
    pub trees_with_dbh: usize,
    pub nodes: usize,
    pub loop_closures: usize,
    pub payloads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventMsg {
    Ack {
        client: ClientId,
        command_seq: u64,
        command: String,
    },
    Reject {
        client: ClientId,
        command_seq: u64,
        command: String,
        reason: String,
    },
    Plan {
        waypoints: Vec<Waypoint>,
    },
    Phase {
        from: Phase,
        to: Phase,
        event: String,
    },
    Goal {
        index: usize,
        position: [f64; 2],
    },
    GoalSkipped {
        index: usize,
        reason: String,
    },
    Trapped {
        position: [f64; 2],
    },
    InterventionOpened {
        cause: InterventionCause,
        pose: Pose4,
    },
    InterventionExtended {
        distance: f64,
        heading: f64,
        trapped: bool,
    },
    InterventionClosed {
        start: f64,
        end: f64,
        cause: InterventionCause,
    },
    LoopClosure {
        node: usize,
        edges: usize,
        initial_cost: f64,
        final_cost: f64,
    },
    Payload {
        id: usize,
        anchor: usize,
        points: usize,
    },
    Warning {
        message: String,
    },
    MissionEnded {
        outcome: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    State(StateMsg),
    TerrainPatch(TerrainPatchMsg),
    GraphUpdate(GraphUpdateMsg),
    TreeUpdate(TreeUpdateMsg),
    Metrics(MetricsMsg),
    Event(EventMsg),
}

impl ServerBody {
    pub fn type_name(&self) -> &'static str {
        match self {
            ServerBody::State(_) => "state",
            ServerBody::TerrainPatch(_) => "terrain_patch",
            ServerBody::GraphUpdate(_) => "graph_update",
            ServerBody::TreeUpdate(_) => "tree_update",
            ServerBody::Metrics(_) => "metrics",
            ServerBody::Event(_) => "event",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    /// Simulated mission time (s).
    pub t: f64,
    #[serde(flatten)]
    pub body: ServerBody,
    /// Recipient for acknowledgements and rejections; broadcast when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<ClientId>,
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serialises")
    }
}
