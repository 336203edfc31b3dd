//! Payload-level analysis and offline cloud analysis.

use std::path::Path;

use crate::analysis::{
    export_marteloscope, fit_terrain_cloth, segment_trees, AnalysisParams, ExportPaths,
    ForestInventory, TerrainModel, TreeCandidate,
};
use crate::error::Result;
use crate::estimation::NodeId;
use crate::geom::{PointCloud, Pose4};

#[derive(Debug, Clone)]
pub struct PayloadAnalysis {
    pub terrain: TerrainModel,
    pub candidates: Vec<TreeCandidate>,
    pub ground_points: usize,
    pub cloth_iterations: usize,
}

/// Ground filter and segmentation of one gravity-aligned cloud, in its own frame.
pub fn analyze_payload(cloud: &PointCloud, params: &AnalysisParams) -> Result<PayloadAnalysis> {
    let cloth = fit_terrain_cloth(cloud, &params.cloth)?;
    let candidates = segment_trees(cloud, &cloth.terrain, &params.segment);
    Ok(PayloadAnalysis {
        ground_points: cloth.ground_count(),
        cloth_iterations: cloth.iterations,
        terrain: cloth.terrain,
        candidates,
    })
}

/// Analyses and aggregates one payload; returns the ids of changed trees.
pub fn ingest_payload(
    inventory: &mut ForestInventory,
    cloud: &PointCloud,
    anchor: NodeId,
    anchor_pose: Pose4,
    payload_id: usize,
    params: &AnalysisParams,
) -> Result<(PayloadAnalysis, std::collections::BTreeSet<u32>)> {
    let a = analyze_payload(cloud, params)?;
    let touched = inventory.aggregate(
        a.candidates.clone(),
        &a.terrain,
        anchor,
        anchor_pose,
        payload_id,
        params,
    );
    Ok((a, touched))
}

/// Runs the whole pipeline on a single cloud treated as one payload at the origin.
pub fn analyze_cloud(cloud: &PointCloud, params: &AnalysisParams) -> Result<ForestInventory> {
    let mut inv = ForestInventory::new();
    ingest_payload(&mut inv, cloud, 0, Pose4::IDENTITY, 0, params)?;
    Ok(inv)
}

/// Reads a PLY cloud, analyses it and writes the marteloscope and inventory into `out`.
pub fn analyze_cloud_file(
    ply: &Path,
    params: &AnalysisParams,
    out: &Path,
) -> Result<(ForestInventory, ExportPaths)> {
    let cloud = crate::io::read_ply(ply)?;
    let inv = analyze_cloud(&cloud, params)?;
    let paths = export_marteloscope(&inv, out)?;
    Ok((inv, paths))
}
