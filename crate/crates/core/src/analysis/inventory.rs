//! Incremental forest inventory keyed to pose-graph anchors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cloth::ClothParams;
use super::segment::{SegmentParams, TreeCandidate};
use super::stem::{
    estimate_traits, fit_circles_along_stem, reconstruct_frustums, Frustum, StemCircle, StemParams,
    Traits,
};
use super::terrain::TerrainModel;
use crate::estimation::NodeId;
use crate::geom::{PointCloud, Pose4, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub cloth: ClothParams,
    pub segment: SegmentParams,
    pub stem: StemParams,
    pub merge_radius: f64,
    pub coverage_bins: u8,
    pub voxel_leaf: f64,
    pub terrain_resolution: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            cloth: ClothParams::default(),
            segment: SegmentParams::default(),
            stem: StemParams::default(),
            merge_radius: 1.0,
            coverage_bins: 8,
            voxel_leaf: 0.02,
            terrain_resolution: 0.5,
        }
    }
}

/// Points contributed by one payload, kept in the frame of its anchor node.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPart {
    pub anchor: NodeId,
    /// Current estimate of the anchor pose.
    pub pose: Pose4,
    pub local: PointCloud,
    pub base_local: [f64; 3],
}

impl CloudPart {
    pub fn cloud(&self) -> PointCloud {
        self.local.transformed(&self.pose)
    }

    pub fn base(&self) -> [f64; 3] {
        let b = self.pose.transform_point(&Vec3::new(
            self.base_local[0],
            self.base_local[1],
            self.base_local[2],
        ));
        [b.x, b.y, b.z]
    }
}

/// Cloth terrain of one payload in its anchor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainTile {
    pub anchor: NodeId,
    pub pose: Pose4,
    pub model: TerrainModel,
}

impl TerrainTile {
    /// Map-frame height and confidence at a map-frame position.
    pub fn height_at(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let l = self.pose.inverse().transform_point(&Vec3::new(x, y, 0.0));
        let (i, j) = self.model.cell_of(l.x, l.y)?;
        let w = self.model.weight[self.model.index(i, j)];
        if w <= 0.0 {
            return None;
        }
        let h = self.model.height_at(l.x, l.y)?;
        Some((h + self.pose.z, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeInstance {
    pub id: u32,
    pub parts: Vec<CloudPart>,
    pub base: [f64; 3],
    pub radius_hint: f64,
    pub circles: Vec<StemCircle>,
    pub frustums: Vec<Frustum>,
    pub traits: Traits,
    pub coverage: BTreeSet<u8>,
    pub last_update: NodeId,
}

impl TreeInstance {
    pub fn anchors(&self) -> BTreeSet<NodeId> {
        self.parts.iter().map(|p| p.anchor).collect()
    }

    pub fn center(&self) -> [f64; 2] {
        [self.base[0], self.base[1]]
    }

    pub fn point_count(&self) -> usize {
        self.parts.iter().map(|p| p.local.len()).sum()
    }

    /// Union of all parts in the map frame. Parts are deduplicated on insertion in
    /// their own frame, so the union moves rigidly with the anchor poses.
    pub fn cloud(&self) -> PointCloud {
        let mut pc = PointCloud::new();
        for p in &self.parts {
            pc.extend(&p.cloud());
        }
        pc
    }

    fn recompute_base(&mut self) {
        let total: f64 = self.parts.iter().map(|p| p.local.len() as f64).sum();
        if total <= 0.0 {
            return;
        }
        let mut b = [0.0; 3];
        for p in &self.parts {
            let w = p.local.len() as f64 / total;
            let pb = p.base();
            for k in 0..3 {
                b[k] += w * pb[k];
            }
        }
        self.base = b;
    }

    /// Recomputes the circle stack, frustums and traits from the merged cloud.
    pub fn reconstruct(&mut self, ground: Option<f64>, params: &AnalysisParams) {
        self.recompute_base();
        let ground = ground.unwrap_or(self.base[2]);
        let cloud = self.cloud();
        let top = cloud
            .points
            .iter()
            .map(|p| p.z - ground)
            .fold(f64::NEG_INFINITY, f64::max);
        let top = top.is_finite().then_some(top);
        match fit_circles_along_stem(&cloud, ground, &params.stem) {
            Ok(circles) => {
                self.frustums = reconstruct_frustums(&circles).unwrap_or_default();
                self.traits = estimate_traits(&circles, top, &params.stem);
                self.circles = circles;
            }
            Err(_) => {
                self.circles.clear();
                self.frustums.clear();
                self.traits = Traits {
                    height: top,
                    ..Default::default()
                };
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForestInventory {
    pub trees: BTreeMap<u32, TreeInstance>,
    pub tiles: Vec<TerrainTile>,
    pub payloads: Vec<usize>,
    pub revision: u64,
    pub next_id: u32,
}

fn bearing_bin(from: [f64; 2], to: [f64; 2], bins: u8) -> u8 {
    let a = (to[1] - from[1])
        .atan2(to[0] - from[0])
        .rem_euclid(std::f64::consts::TAU);
    ((a / std::f64::consts::TAU * bins as f64) as u8).min(bins - 1)
}

impl ForestInventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Confidence-weighted ground height over all tiles covering the position.
    pub fn ground_at(&self, x: f64, y: f64) -> Option<f64> {
        let (mut s, mut w) = (0.0, 0.0);
        for tile in &self.tiles {
            if let Some((h, wt)) = tile.height_at(x, y) {
                s += wt * h;
                w += wt;
            }
        }
        (w > 0.0).then(|| s / w)
    }

    /// Global terrain on a map-aligned grid, merged from all tiles.
    pub fn terrain(&self, resolution: f64) -> TerrainModel {
        let samples: Vec<Vec<[f64; 4]>> = self
            .tiles
            .iter()
            .map(|t| t.model.transformed_samples(&t.pose))
            .collect();
        TerrainModel::from_samples(resolution, samples.iter().map(|s| s.as_slice()))
    }

    fn nearest(&self, c: [f64; 2], radius: f64) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for (id, t) in &self.trees {
            let d = (t.base[0] - c[0]).hypot(t.base[1] - c[1]);
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, *id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Merges instances closer than the merge radius until none remain; the lower id survives.
    fn merge_close(&mut self, touched: &mut BTreeSet<u32>, radius: f64) {
        loop {
            let ids: Vec<u32> = self.trees.keys().copied().collect();
            let mut pair = None;
            'outer: for (a, ia) in ids.iter().enumerate() {
                for ib in &ids[a + 1..] {
                    let (ta, tb) = (&self.trees[ia], &self.trees[ib]);
                    if (ta.base[0] - tb.base[0]).hypot(ta.base[1] - tb.base[1]) <= radius {
                        pair = Some((*ia, *ib));
                        break 'outer;
                    }
                }
            }
            let Some((keep, drop)) = pair else { break };
            let gone = self.trees.remove(&drop).expect("present");
            let t = self.trees.get_mut(&keep).expect("present");
            t.parts.extend(gone.parts);
            t.coverage.extend(gone.coverage);
            t.last_update = t.last_update.max(gone.last_update);
            t.recompute_base();
            touched.remove(&drop);
            touched.insert(keep);
        }
    }

    fn refresh(&mut self, touched: &BTreeSet<u32>, params: &AnalysisParams) {
        for id in touched {
            let Some(base) = self.trees.get(id).map(|t| {
                let mut t = t.clone();
                t.recompute_base();
                t.base
            }) else {
                continue;
            };
            let ground = self.ground_at(base[0], base[1]);
            if let Some(t) = self.trees.get_mut(id) {
                t.reconstruct(ground, params);
            }
        }
    }

    /// Folds one payload into the inventory. `candidates` and `terrain` are in the
    /// frame of `anchor`, whose current pose estimate is `anchor_pose`.
    /// Returns the ids of instances that were created or changed.
    pub fn aggregate(
        &mut self,
        candidates: Vec<TreeCandidate>,
        terrain: &TerrainModel,
        anchor: NodeId,
        anchor_pose: Pose4,
        payload: usize,
        params: &AnalysisParams,
    ) -> BTreeSet<u32> {
        self.tiles.push(TerrainTile {
            anchor,
            pose: anchor_pose,
            model: terrain.clone(),
        });
        let mut touched = BTreeSet::new();
        let from = [anchor_pose.x, anchor_pose.y];
        for cand in candidates {
            let part = CloudPart {
                anchor,
                pose: anchor_pose,
                local: cand.cloud.voxel_dedup(params.voxel_leaf),
                base_local: cand.base,
            };
            let base = part.base();
            let c = [base[0], base[1]];
            let bin = bearing_bin(from, c, params.coverage_bins);
            let id = match self.nearest(c, params.merge_radius) {
                Some(id) => {
                    let t = self.trees.get_mut(&id).expect("present");
                    t.parts.push(part);
                    t.coverage.insert(bin);
                    t.last_update = anchor;
                    t.recompute_base();
                    id
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.trees.insert(
                        id,
                        TreeInstance {
                            id,
                            parts: vec![part],
                            base,
                            radius_hint: cand.cylinder.radius,
                            circles: Vec::new(),
                            frustums: Vec::new(),
                            traits: Traits::default(),
                            coverage: BTreeSet::from([bin]),
                            last_update: anchor,
                        },
                    );
                    id
                }
            };
            touched.insert(id);
        }
        self.merge_close(&mut touched, params.merge_radius);
        self.refresh(&touched, params);
        self.payloads.push(payload);
        self.revision += 1;
        touched
    }

    /// Moves every part and terrain tile to the corrected anchor poses, then merges
    /// instances that now coincide.
    pub fn reindex_on_loop_closure(
        &mut self,
        new_poses: &[Pose4],
        params: &AnalysisParams,
    ) -> BTreeSet<u32> {
        let mut touched = BTreeSet::new();
        for (id, tree) in self.trees.iter_mut() {
            let mut changed = false;
            for part in &mut tree.parts {
                if let Some(new) = new_poses.get(part.anchor) {
                    if *new != part.pose {
                        part.pose = *new;
                        changed = true;
                    }
                }
            }
            if changed {
                tree.recompute_base();
                touched.insert(*id);
            }
        }
        let mut terrain_changed = false;
        for tile in &mut self.tiles {
            if let Some(new) = new_poses.get(tile.anchor) {
                if *new != tile.pose {
                    tile.pose = *new;
                    terrain_changed = true;
                }
            }
        }
        if terrain_changed {
            // Ground heights may have moved under every tree.
            touched.extend(self.trees.keys().copied());
        }
        self.merge_close(&mut touched, params.merge_radius);
        self.refresh(&touched, params);
        self.revision += 1;
        touched
    }

    /// Instances with a DBH estimate.
    pub fn reconstructed(&self) -> impl Iterator<Item = &TreeInstance> {
        self.trees.values().filter(|t| t.traits.dbh.is_some())
    }
}
