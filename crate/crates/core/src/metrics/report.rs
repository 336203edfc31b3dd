//! Mission report with the per-mission summary columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::segments::{
    compute_mdbi_mtbi, total_distance, AutonomySegment, InterventionRecord, TrajectorySample,
};
use crate::analysis::ForestInventory;

/// Raw mission log the report is built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub name: String,
    pub trajectory: Vec<TrajectorySample>,
    pub interventions: Vec<InterventionRecord>,
    /// Final mission phase.
    pub outcome: String,
}

impl MissionRecord {
    pub fn duration(&self) -> f64 {
        match (self.trajectory.first(), self.trajectory.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub name: String,
    pub outcome: String,
    pub mission_time_s: f64,
    pub distance_m: f64,
    pub area_ha: f64,
    pub interventions: usize,
    pub mdbi_m: Option<f64>,
    pub mtbi_s: Option<f64>,
    pub segments: Vec<AutonomySegment>,
    pub segment_distances_m: Vec<f64>,
    pub segment_durations_s: Vec<f64>,
    pub intervention_durations_s: Vec<f64>,
    pub tree_count: usize,
    pub trees_with_dbh: usize,
    pub exports: BTreeMap<String, String>,
}

pub fn build_report(
    record: &MissionRecord,
    inventory: &ForestInventory,
    segments: &[AutonomySegment],
    area_ha: f64,
) -> MissionReport {
    let (mdbi, mtbi) = compute_mdbi_mtbi(segments);
    MissionReport {
        name: record.name.clone(),
        outcome: record.outcome.clone(),
        mission_time_s: record.duration(),
        distance_m: total_distance(&record.trajectory),
        area_ha,
        interventions: record.interventions.len(),
        mdbi_m: mdbi,
        mtbi_s: mtbi,
        segments: segments.to_vec(),
        segment_distances_m: segments.iter().map(|s| s.distance).collect(),
        segment_durations_s: segments.iter().map(|s| s.duration()).collect(),
        intervention_durations_s: record.interventions.iter().map(|r| r.duration()).collect(),
        tree_count: inventory.len(),
        trees_with_dbh: inventory.reconstructed().count(),
        exports: BTreeMap::new(),
    }
}

impl MissionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// One-row table in the usual deployment-summary layout.
    pub fn to_text(&self) -> String {
        let mut s = reports_table(std::slice::from_ref(self));
        let _ = writeln!(
            s,
            "outcome: {}  trees with DBH: {}",
            self.outcome, self.trees_with_dbh
        );
        s
    }
}

/// Deployment-summary table with one row per mission.
pub fn reports_table(reports: &[MissionReport]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>10} {:>9} {:>6} {:>9} {:>9} {:>6}",
        "Mission", "Time [s]", "Dist [m]", "Area [ha]", "Int.", "MDBI [m]", "MTBI [s]", "Trees"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>10.1} {:>10.1} {:>9.2} {:>6} {:>9} {:>9} {:>6}",
            r.name,
            r.mission_time_s,
            r.distance_m,
            r.area_ha,
            r.interventions,
            opt(r.mdbi_m),
            opt(r.mtbi_s),
            r.tree_count
        );
    }
    s
}

#[derive(Serialize)]
struct SegmentRow {
    index: usize,
    start_s: f64,
    end_s: f64,
    duration_s: f64,
    distance_m: f64,
}

#[derive(Serialize)]
struct InterventionRow {
    index: usize,
    start_s: f64,
    end_s: f64,
    duration_s: f64,
    cause: super::segments::InterventionCause,
    start_x: f64,
    start_y: f64,
    end_x: f64,
    end_y: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    let mut any = false;
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
        any = true;
    }
    if !any {
        w.write_record(header).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn segments_csv(segments: &[AutonomySegment]) -> String {
    to_csv(
        segments.iter().enumerate().map(|(index, s)| SegmentRow {
            index,
            start_s: s.start,
            end_s: s.end,
            duration_s: s.duration(),
            distance_m: s.distance,
        }),
        &["index", "start_s", "end_s", "duration_s", "distance_m"],
    )
}

pub fn interventions_csv(records: &[InterventionRecord]) -> String {
    to_csv(
        records
            .iter()
            .enumerate()
            .map(|(index, r)| InterventionRow {
                index,
                start_s: r.start,
                end_s: r.end,
                duration_s: r.duration(),
                cause: r.cause,
                start_x: r.start_pose.x,
                start_y: r.start_pose.y,
                end_x: r.end_pose.x,
                end_y: r.end_pose.y,
            }),
        &[
            "index",
            "start_s",
            "end_s",
            "duration_s",
            "cause",
            "start_x",
            "start_y",
            "end_x",
            "end_y",
        ],
    )
}
