//! Forest analysis: ground filtering, tree segmentation, stem reconstruction,
//! inventory aggregation and marteloscope export.

pub mod cloth;
pub mod export;
pub mod fit;
pub mod inventory;
pub mod segment;
pub mod stem;
pub mod terrain;

pub use cloth::{fit_terrain_cloth, ClothParams, ClothResult};
pub use export::{
    export_marteloscope, inventory_dump, marteloscope_rows, parse_marteloscope_csv, ExportPaths,
    MarteloscopeRow,
};
pub use fit::{fit_circle, fit_circle_kasa, fit_cylinder, Circle, Cylinder};
pub use inventory::{AnalysisParams, ForestInventory, TreeInstance};
pub use segment::{segment_trees, SegmentParams, TreeCandidate};
pub use stem::{
    estimate_traits, fit_circles_along_stem, reconstruct_frustums, stem_volume, Frustum,
    StemCircle, StemParams, TraitFlags, Traits,
};
pub use terrain::TerrainModel;
