//! Planar polygonal mapping from depth images.
//!
//! The pipeline turns noisy depth frames into a compact world model built
//! from planar polygons: edge-preserving depth smoothing, per-pixel surface
//! normals, edge-based segmentation into polygonal regions, robust plane
//! fitting per region, and a merge stage that folds frames into a persistent
//! map while tracking vertical odometry drift with a scalar filter.
//!
//! Conventions used throughout:
//!
//! * Depth rasters hold `f32` millimeters, `0.0` meaning invalid. Everything
//!   3-D (points, planes, map state) is `f64` meters.
//! * Pixel `(u, v)` is column/row; buffers are row-major.
//! * Camera frame: x right, y down, z forward. Camera-frame normals point
//!   toward the camera (`n_z < 0`); world-frame normals of near-horizontal
//!   surfaces point up (`n_z > 0`).

pub mod config;
pub mod diffusion;
pub mod evalbench;
pub mod geom2d;
pub mod imaging;
pub mod mapman;
pub mod normals;
pub mod pipeline;
pub mod planefit;
pub mod scenegen;
pub mod segmentation;
