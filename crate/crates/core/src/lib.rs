//! Learned compression of LiDAR point-cloud maps into per-keyframe heat maps,
//! and monocular camera localization against the compressed map.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod mapstore;
pub mod model;
pub mod nets;
pub mod offline;
pub mod online;
pub mod raster;
pub mod synth;

pub use error::{
    EvalError, GeometryError, LossError, MapError, PipelineError, ShapeError, SynthError,
};
pub use geometry::{CameraModel, DepthImage, PointCloud, Pose};
