//! One-frame orchestration: a raw depth image in, planar polygons out.

use std::time::Instant;

use thiserror::Error;

use crate::config::PipelineConfig;
use crate::diffusion::{diffuse, DiffusionError};
use crate::imaging::{CameraIntrinsics, DepthImage};
use crate::normals::{compute_normals, NormalError, NormalImage};
use crate::planefit::{extract_plane_polygons, ExtractionReport, FitError, PlanarPolygon};
use crate::segmentation::{
    detect_edges, extract_regions, EdgeMask, PixelPolygon, SegmentationError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Normals(#[from] NormalError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Wall-clock cost of each stage, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct StageTimings {
    pub diffusion_ms: f64,
    pub normals_ms: f64,
    pub segmentation_ms: f64,
    pub planefit_ms: f64,
    pub total_ms: f64,
}

/// Everything one frame produces. Polygons stay in the camera frame; the
/// map layer owns the world transform.
#[derive(Debug)]
pub struct FrameResult {
    pub filtered: DepthImage,
    pub normals: NormalImage,
    pub edges: EdgeMask,
    pub regions: Vec<PixelPolygon>,
    pub polygons: Vec<PlanarPolygon>,
    pub report: ExtractionReport,
    pub timings: StageTimings,
}

fn ms(from: Instant, to: Instant) -> f64 {
    to.duration_since(from).as_secs_f64() * 1e3
}

/// Runs smoothing, normal estimation, segmentation and plane fitting on one
/// depth frame.
pub fn run_frame(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<FrameResult, PipelineError> {
    cfg.validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let t0 = Instant::now();
    let filtered = diffuse(depth, &cfg.diffusion)?;
    let t1 = Instant::now();
    let normals = compute_normals(&filtered, k, cfg.normals.mode)?;
    let t2 = Instant::now();
    let edges = detect_edges(&normals, &cfg.segmentation)?;
    let regions = extract_regions(&edges, &cfg.segmentation)?;
    let t3 = Instant::now();
    let (polygons, report) = extract_plane_polygons(&filtered, k, &regions, &cfg.ransac)?;
    let t4 = Instant::now();

    Ok(FrameResult {
        filtered,
        normals,
        edges,
        regions,
        polygons,
        report,
        timings: StageTimings {
            diffusion_ms: ms(t0, t1),
            normals_ms: ms(t1, t2),
            segmentation_ms: ms(t2, t3),
            planefit_ms: ms(t3, t4),
            total_ms: ms(t0, t4),
        },
    })
}
