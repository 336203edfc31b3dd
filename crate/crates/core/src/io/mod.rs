//! File formats: PLY clouds, payload sidecars and world exports.

pub mod ply;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use ply::{decode_ply, encode_ply, read_ply, write_ply};

use crate::error::{Error, Result};
use crate::estimation::{DataPayload, PayloadSidecar};
use crate::geom::{PointCloud, Pose4};
use crate::sim::World;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

pub fn sidecar_path(ply: &Path) -> PathBuf {
    ply.with_extension("json")
}

/// Writes `payload_<id>.ply` and its JSON sidecar into `dir`; returns the PLY path.
pub fn write_payload(dir: &Path, payload: &DataPayload, anchor_pose: Pose4) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ply = dir.join(format!("payload_{:04}.ply", payload.id));
    write_ply(&ply, &payload.cloud)?;
    write_json(&sidecar_path(&ply), &payload.sidecar(anchor_pose))?;
    Ok(ply)
}

pub fn read_payload(ply: &Path) -> Result<(PayloadSidecar, PointCloud)> {
    let cloud = read_ply(ply)?;
    let side: PayloadSidecar = read_json(&sidecar_path(ply))?;
    Ok((side, cloud))
}

/// Ground-truth cloud as PLY and the tree table as JSON.
pub fn export_world(world: &World, dir: &Path, spacing: f64) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ply = dir.join("world.ply");
    let table = dir.join("trees.json");
    write_ply(&ply, &world.sample_cloud(spacing))?;
    write_json(&table, &world.trees)?;
    Ok((ply, table))
}
