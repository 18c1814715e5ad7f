//! Voxel map, planar projection and frontier exploration.

mod frontier;
mod map2d;
mod voxel;

pub use frontier::{detect_frontiers, is_boundary, sample_candidates, CandidatePose, CandidateSet, Frontier};
pub use map2d::{project_to_2d, Map2D};
pub use voxel::{Bounds2, GridConfig, IntegrationStats, Occupancy, Voxel, VoxelGrid, GRID_HEIGHT};
