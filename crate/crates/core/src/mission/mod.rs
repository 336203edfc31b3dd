//! Mission configuration, the closed-loop runner, the wire protocol, replay and studies.

pub mod analyze;
pub mod config;
pub mod evaluate;
pub mod replay;
pub mod runner;
pub mod study;
pub mod wire;

pub use analyze::{
    analyze_cloud, analyze_cloud_file, analyze_payload, ingest_payload, PayloadAnalysis,
};
pub use config::{
    clean_world_config, forest_world, m1_config, m7_config, AutoPolicy, MissionConfig,
    ScriptedCommand, SurveyConfig,
};
pub use evaluate::{evaluate_inventory, InventoryEvaluation, TreeMatch};
pub use replay::{parse_event_log, read_event_log, replay, replay_messages, EventLog};
pub use runner::{run_mission, run_mission_with, write_outputs, MissionOutput, MissionRunner};
pub use study::{drift_study, drift_trial, lawnmower_poses, DriftStudyParams, DriftTrial};
pub use wire::{
    parse_client_message, ClientCommand, ClientId, ClientMessage, EventMsg, ServerBody,
    ServerMessage, LOCAL_CLIENT,
};
