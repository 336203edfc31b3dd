//! Dense, gravity-aligned clouds accumulated over a fixed travel distance.

use serde::{Deserialize, Serialize};

use super::pose_graph::NodeId;
use crate::geom::{PointCloud, Pose4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PayloadParams {
    /// Travel distance that triggers an emission (m).
    pub distance: f64,
    pub voxel_leaf: f64,
    /// Points further than this from their scan origin (horizontally) are dropped.
    pub max_range: f64,
}

impl Default for PayloadParams {
    fn default() -> Self {
        Self {
            distance: 20.0,
            voxel_leaf: 0.02,
            max_range: 15.0,
        }
    }
}

/// Scan in the gravity-aligned body frame, tagged with the node it hangs off.
#[derive(Debug, Clone)]
pub struct TaggedScan {
    pub node: NodeId,
    /// Body pose relative to `node` when the scan was taken.
    pub offset: Pose4,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPayload {
    pub id: usize,
    pub anchor: NodeId,
    /// Points in the gravity-aligned frame of the anchor node.
    pub cloud: PointCloud,
    pub distance: f64,
    pub stamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSidecar {
    pub id: usize,
    pub anchor: NodeId,
    pub anchor_pose: Pose4,
    pub distance: f64,
    pub stamp: f64,
    pub points: usize,
}

impl DataPayload {
    pub fn sidecar(&self, anchor_pose: Pose4) -> PayloadSidecar {
        PayloadSidecar {
            id: self.id,
            anchor: self.anchor,
            anchor_pose,
            distance: self.distance,
            stamp: self.stamp,
            points: self.cloud.len(),
        }
    }
}

/// Emits a payload once `travel` reaches the threshold, merging `scans` into the
/// frame of `anchor` using the current `node_poses`.
pub fn accumulate_payload(
    scans: &[TaggedScan],
    node_poses: &[Pose4],
    travel: f64,
    anchor: NodeId,
    id: usize,
    stamp: f64,
    params: &PayloadParams,
) -> Option<DataPayload> {
    if travel < params.distance || scans.is_empty() {
        return None;
    }
    let anchor_inv = node_poses.get(anchor)?.inverse();
    let mut cloud = PointCloud::new();
    let r2 = params.max_range * params.max_range;
    for scan in scans {
        let Some(node_pose) = node_poses.get(scan.node) else {
            continue;
        };
        let to_anchor = anchor_inv.compose(&node_pose.compose(&scan.offset));
        for (i, p) in scan.cloud.points.iter().enumerate() {
            if p.x * p.x + p.y * p.y > r2 {
                continue;
            }
            cloud.push(to_anchor.transform_point(p), scan.cloud.label(i));
        }
    }
    if !scans
        .iter()
        .all(|s| s.cloud.has_labels() || s.cloud.is_empty())
    {
        cloud.labels.clear();
    }
    let cloud = cloud.voxel_dedup(params.voxel_leaf);
    if cloud.is_empty() {
        return None;
    }
    Some(DataPayload {
        id,
        anchor,
        cloud,
        distance: travel,
        stamp,
    })
}

/// Bookkeeping for the scans since the last emission.
#[derive(Debug, Clone, Default)]
pub struct PayloadAccumulator {
    pub scans: Vec<TaggedScan>,
    pub travel: f64,
    pub emitted: usize,
}

impl PayloadAccumulator {
    pub fn push(&mut self, scan: TaggedScan) {
        self.scans.push(scan);
    }

    pub fn add_travel(&mut self, d: f64) {
        self.travel += d;
    }

    /// Tries to emit; on success the accumulator is reset.
    pub fn try_emit(
        &mut self,
        node_poses: &[Pose4],
        anchor: NodeId,
        stamp: f64,
        params: &PayloadParams,
    ) -> Option<DataPayload> {
        let p = accumulate_payload(
            &self.scans,
            node_poses,
            self.travel,
            anchor,
            self.emitted,
            stamp,
            params,
        )?;
        self.emitted += 1;
        self.scans.clear();
        self.travel = 0.0;
        Some(p)
    }

    /// Emits whatever is pending regardless of distance (end of mission).
    pub fn flush(
        &mut self,
        node_poses: &[Pose4],
        anchor: NodeId,
        stamp: f64,
        params: &PayloadParams,
    ) -> Option<DataPayload> {
        let forced = PayloadParams {
            distance: 0.0,
            ..params.clone()
        };
        let p = accumulate_payload(
            &self.scans,
            node_poses,
            self.travel.max(0.0),
            anchor,
            self.emitted,
            stamp,
            &forced,
        )?;
        self.emitted += 1;
        self.scans.clear();
        self.travel = 0.0;
        Some(p)
    }
}
