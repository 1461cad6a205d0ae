//! Geometric and evaluation machinery for cross-device omnidirectional
//! visual localization: camera models with exact projection/unprojection,
//! virtual-camera resampling between panoramas and perspective/fisheye
//! views, feature-group image retrieval scoring, depth-backed bearing-vector
//! pose estimation, and the eigenvalue-based lidar bundle adjustment used
//! for ground-truth map building.

pub mod camera;
pub mod geom;
pub mod io;
pub mod lidar;
pub mod pose;
pub mod raster;
pub mod retrieval;
pub mod synth;
pub mod vcam;

pub use camera::{Bearing, CameraModel, DoubleSphereModel, EquirectModel, PinholeModel};
pub use geom::{RigidTransform, Rotation};
pub use raster::{DepthMap, RasterImage, SampleMode};
