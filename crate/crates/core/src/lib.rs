//! Deterministic synthetic-forest mission workbench.
//!
//! The crate is organised along the data flow of an autonomous forest survey:
//!
//! - [`sim`] generates a ground-truth forest and simulates kinematics, LiDAR and odometry drift.
//! - [`estimation`] keeps the pose graph, dense data payloads and the local 2.5D terrain map.
//! - [`autonomy`] plans the lawnmower survey, runs the mission state machine and the
//!   geodesic-distance-field local planner.
//! - [`analysis`] turns payloads into an aggregated forest inventory (ground filtering,
//!   stem segmentation, circle/frustum reconstruction, DBH and height).
//! - [`metrics`] computes autonomy segments, MDBI/MTBI, covered area and the mission report.
//! - [`mission`] wires everything into a headless runner, the wire protocol and replay.
//!
//! Inner loops that are data parallel (ray casting, rasterisation, point classification,
//! seed sweeps) go through [`par::Execution`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iterators otherwise.

pub mod analysis;
pub mod autonomy;
pub mod error;
pub mod estimation;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod mission;
pub mod par;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
