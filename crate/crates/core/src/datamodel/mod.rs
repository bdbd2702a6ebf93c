//! Geometric and raster value types, the on-disk dataset layout and the
//! deterministic random streams used everywhere else.

mod camera;
mod dataset;
mod pose;
mod raster;
mod rng;

pub use camera::{Aabb, CameraIntrinsics, NEAR_LIMIT};
pub use dataset::{
    load_dataset, read_dpt, save_dataset, write_dpt, Frame, ObjectSpec, SceneDataset,
};
pub use pose::Pose;
pub use raster::Raster;
pub use rng::{stream, Rng};
