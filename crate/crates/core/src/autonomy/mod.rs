//! Survey planning, mission state machine, traversability, distance field and local control.

pub mod gdf;
pub mod local;
pub mod planner;
pub mod survey;
pub mod traversability;

pub use gdf::{compute_gdf, compute_gdf_with_base, GeodesicField};
pub use local::{
    check_progress, compute_velocity_command, descent_direction, LocalPlannerParams, LocalSignal,
    Progress, ProgressParams,
};
pub use planner::{mission_step, MissionAction, MissionEvent, MissionState, Phase, Transition};
pub use survey::{
    plan_survey, plan_survey_with, SurveyParams, SurveyPlan, Waypoint, WaypointStatus,
};
pub use traversability::{
    compute_cost, score_traversability, CostGrid, CostParams, TraversabilityLayer,
    TraversabilityParams,
};
