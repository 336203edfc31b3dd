//! Deployment metrics: autonomy segments, MDBI/MTBI, covered area and the mission report.

pub mod coverage;
pub mod report;
pub mod segments;

pub use coverage::{
    compute_covered_area, compute_covered_area_with, covered_cells, DEFAULT_COVERAGE_RESOLUTION,
};
pub use report::{
    build_report, interventions_csv, reports_table, segments_csv, MissionRecord, MissionReport,
};
pub use segments::{
    arc_length, compute_mdbi_mtbi, compute_segments, total_distance, validate_interventions,
    AutonomySegment, InterventionCause, InterventionRecord, TrajectorySample,
};
