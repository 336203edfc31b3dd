//! Odometry pose graph, loop closure, payload accumulation and local terrain mapping.

pub mod g2o;
pub mod optimize;
pub mod payload;
pub mod pose_graph;
pub mod terrain_map;

pub use g2o::to_g2o;
pub use optimize::{optimize_graph, OptimizeParams, OptimizeReport};
pub use payload::{
    accumulate_payload, DataPayload, PayloadAccumulator, PayloadParams, PayloadSidecar, TaggedScan,
};
pub use pose_graph::{
    detect_loop_closures, edge_residual, integrate_odometry, Edge, EdgeKind, Information,
    LoopClosureParams, Node, NodeId, PoseGraph,
};
pub use terrain_map::{update_terrain_map, TerrainMap, TerrainMapParams};
