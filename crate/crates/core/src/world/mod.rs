//! Geometric and semantic maps, ray casting, and projection of detections
//! into the map frame.

mod camera;
mod grid;
pub mod io;
mod mapping;
mod pose;
mod semantic_grid;
mod view;

pub use camera::CameraModel;
pub use grid::{ray_cast, Cell, DistanceField, OccupancyGrid, RangeCaster, RayHit};
pub use mapping::{bresenham, project_detection, snap_to_occupied, Snap, DEFAULT_SNAP_STEPS};
pub use pose::{wrap_angle, Pose};
pub use semantic_grid::{SemanticVoxelGrid, VoxelKey};
pub use view::{expected_semantic_view, fov_bearings, visible_columns, VisibleColumn};
