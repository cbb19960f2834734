//! Extraction quality metrics against exact scene truth, plus a per-stage
//! timing harness.
//!
//! Matching pairs each extracted world-frame polygon with the truth face it
//! overlaps most, gated by normal angle and plane offset. The area score is
//! pooled over the whole frame: summed matched intersection over summed
//! union, with unmatched area on either side counted in the union only.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::geom2d::{intersection_area_sets, total_area, union_all, GeomError, Polygon2};
use crate::imaging::{CameraIntrinsics, ImagingError, Pose};
use crate::mapman::PolygonMap;
use crate::pipeline::{run_frame, PipelineError, StageTimings};
use crate::planefit::{plane_basis, Frame, PlanarPolygon};
use crate::scenegen::{render_depth, GroundTruth, RenderParams, Scene, SceneError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bad eval params: {0}")]
    BadParams(String),
    #[error("polygon {0} is not in the world frame")]
    NotWorld(usize),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Pairing gates between extracted polygons and truth faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchParams {
    /// Max angle between polygon and face normals, degrees.
    pub normal_tol_deg: f64,
    /// Max distance from the polygon centroid to the face plane, meters.
    pub offset_tol_m: f64,
    /// Faces tilted more than this from the vertical axis count as walls
    /// and are excluded from the angle/height statistics.
    pub vertical_cutoff_deg: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            normal_tol_deg: 10.0,
            offset_tol_m: 0.02,
            vertical_cutoff_deg: 45.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.normal_tol_deg > 0.0 && self.normal_tol_deg < 90.0) {
            return Err(EvalError::BadParams(format!(
                "normal_tol_deg {} outside (0, 90)",
                self.normal_tol_deg
            )));
        }
        if !(self.offset_tol_m > 0.0 && self.offset_tol_m.is_finite()) {
            return Err(EvalError::BadParams(format!(
                "offset_tol_m {} must be positive",
                self.offset_tol_m
            )));
        }
        if !(self.vertical_cutoff_deg > 0.0 && self.vertical_cutoff_deg <= 90.0) {
            return Err(EvalError::BadParams(format!(
                "vertical_cutoff_deg {} outside (0, 90]",
                self.vertical_cutoff_deg
            )));
        }
        Ok(())
    }
}

/// One frame's (or one map's) quality against scene truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    /// Pooled area intersection-over-union across all faces.
    pub iou: f64,
    pub truth_faces: usize,
    pub truth_area: f64,
    pub extracted: usize,
    pub extracted_area: f64,
    /// Extracted polygons paired with some face.
    pub matched: usize,
    /// Truth faces that received no polygon.
    pub unmatched_truth_faces: usize,
    /// Angle between extracted normal and the vertical axis over matches on
    /// near-horizontal faces, degrees; absent when there are none.
    pub mean_angle_to_vertical_deg: Option<f64>,
    pub max_angle_to_vertical_deg: Option<f64>,
    /// |centroid distance to the truth plane| over the same matches, meters.
    pub mean_height_err_m: Option<f64>,
    pub max_height_err_m: Option<f64>,
}

pub fn metrics_to_json(m: &FrameMetrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

/// Scores world-frame polygons against the visible truth faces.
pub fn evaluate_polygons(
    extracted: &[PlanarPolygon],
    truth: &GroundTruth,
    params: &MatchParams,
) -> Result<FrameMetrics, EvalError> {
    params.validate()?;
    for (i, p) in extracted.iter().enumerate() {
        if p.frame != Frame::World {
            return Err(EvalError::NotWorld(i));
        }
    }
    let cos_gate = params.normal_tol_deg.to_radians().cos();
    let cos_vertical = params.vertical_cutoff_deg.to_radians().cos();

    // Each face's regions in its own plane basis, anchored at the plane
    // foot point so every polygon of the face shares coordinates.
    struct FaceCtx {
        origin: Point3<f64>,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
        rings: Vec<Polygon2>,
        area: f64,
        assigned: Vec<Polygon2>,
    }
    let mut faces = Vec::with_capacity(truth.faces.len());
    for f in &truth.faces {
        let (e1, e2) = plane_basis(&f.plane.normal);
        let origin = f.plane.anchor();
        let rings = f
            .polygons
            .iter()
            .map(|p| p.project_to_plane(&origin, &e1, &e2))
            .collect::<Result<Vec<_>, _>>()?;
        faces.push(FaceCtx {
            origin,
            e1,
            e2,
            rings,
            area: f.area(),
            assigned: Vec::new(),
        });
    }

    let mut matched = 0usize;
    let mut unmatched_area = 0.0f64;
    let mut angles: Vec<f64> = Vec::new();
    let mut heights: Vec<f64> = Vec::new();

    for poly in extracted {
        let mut best: Option<(usize, f64, Polygon2)> = None;
        for (fi, face) in truth.faces.iter().enumerate() {
            if face.plane.normal.dot(&poly.plane.normal) < cos_gate {
                continue;
            }
            if face.plane.signed_distance(&poly.centroid).abs() > params.offset_tol_m {
                continue;
            }
            let ctx = &faces[fi];
            let Ok(footprint) = poly.project_to_plane(&ctx.origin, &ctx.e1, &ctx.e2) else {
                continue;
            };
            let inter = intersection_area_sets(&ctx.rings, std::slice::from_ref(&footprint));
            if inter <= 1e-12 {
                continue;
            }
            if best.as_ref().is_none_or(|(_, a, _)| inter > *a) {
                best = Some((fi, inter, footprint));
            }
        }
        match best {
            Some((fi, _, footprint)) => {
                matched += 1;
                faces[fi].assigned.push(footprint);
                let face = &truth.faces[fi];
                if face.plane.normal.z.abs() >= cos_vertical {
                    let up = poly.plane.normal.z.abs().clamp(-1.0, 1.0);
                    angles.push(up.acos().to_degrees());
                    heights.push(face.plane.signed_distance(&poly.centroid).abs());
                }
            }
            None => unmatched_area += poly.area,
        }
    }

    let mut inter_sum = 0.0f64;
    let mut union_sum = unmatched_area;
    let mut unmatched_truth = 0usize;
    for ctx in &faces {
        if ctx.assigned.is_empty() {
            unmatched_truth += 1;
            union_sum += ctx.area;
            continue;
        }
        let merged = union_all(&ctx.assigned)?;
        let inter = intersection_area_sets(&ctx.rings, &merged);
        inter_sum += inter;
        union_sum += ctx.area + total_area(&merged) - inter;
    }

    let iou = if union_sum > 0.0 {
        inter_sum / union_sum
    } else {
        1.0 // nothing expected, nothing found
    };
    let stats = |xs: &[f64]| -> (Option<f64>, Option<f64>) {
        if xs.is_empty() {
            (None, None)
        } else {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let max = xs.iter().cloned().fold(f64::MIN, f64::max);
            (Some(mean), Some(max))
        }
    };
    let (mean_angle, max_angle) = stats(&angles);
    let (mean_height, max_height) = stats(&heights);

    Ok(FrameMetrics {
        iou,
        truth_faces: truth.faces.len(),
        truth_area: truth.total_area(),
        extracted: extracted.len(),
        extracted_area: extracted.iter().map(|p| p.area).sum(),
        matched,
        unmatched_truth_faces: unmatched_truth,
        mean_angle_to_vertical_deg: mean_angle,
        max_angle_to_vertical_deg: max_angle,
        mean_height_err_m: mean_height,
        max_height_err_m: max_height,
    })
}

/// Scores a merged map against truth.
pub fn evaluate_map(
    map: &PolygonMap,
    truth: &GroundTruth,
    params: &MatchParams,
) -> Result<FrameMetrics, EvalError> {
    let polys: Vec<PlanarPolygon> = map.polygons().iter().map(|m| m.polygon.clone()).collect();
    evaluate_polygons(&polys, truth, params)
}

/// Median per-stage cost over repeated runs at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRecord {
    pub width: usize,
    pub height: usize,
    pub runs: usize,
    pub polygons: usize,
    pub diffusion_ms: f64,
    pub normals_ms: f64,
    pub segmentation_ms: f64,
    pub planefit_ms: f64,
    pub total_ms: f64,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Renders the scene at each requested resolution (intrinsics scaled from
/// `base`) and reports median stage timings over `runs` pipeline runs.
pub fn bench_pipeline(
    scene: &Scene,
    base: &CameraIntrinsics,
    pose: &Pose,
    cfg: &PipelineConfig,
    sizes: &[(usize, usize)],
    runs: usize,
) -> Result<Vec<BenchRecord>, EvalError> {
    if runs == 0 {
        return Err(EvalError::BadParams("runs must be positive".into()));
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &(w, h) in sizes {
        let k = base.scaled_to(w, h)?;
        let (depth, _) = render_depth(scene, &k, pose, &RenderParams::default())?;
        let mut samples: Vec<StageTimings> = Vec::with_capacity(runs);
        let mut polygons = 0usize;
        for _ in 0..runs {
            let res = run_frame(&depth, &k, cfg)?;
            polygons = res.polygons.len();
            samples.push(res.timings);
        }
        let field = |get: fn(&StageTimings) -> f64| -> f64 {
            let mut xs: Vec<f64> = samples.iter().map(get).collect();
            median(&mut xs)
        };
        out.push(BenchRecord {
            width: w,
            height: h,
            runs,
            polygons,
            diffusion_ms: field(|t| t.diffusion_ms),
            normals_ms: field(|t| t.normals_ms),
            segmentation_ms: field(|t| t.segmentation_ms),
            planefit_ms: field(|t| t.planefit_ms),
            total_ms: field(|t| t.total_ms),
        });
    }
    Ok(out)
}

pub fn bench_to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(
        "width,height,runs,polygons,diffusion_ms,normals_ms,segmentation_ms,planefit_ms,total_ms\n",
    );
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            r.width,
            r.height,
            r.runs,
            r.polygons,
            r.diffusion_ms,
            r.normals_ms,
            r.segmentation_ms,
            r.planefit_ms,
            r.total_ms
        ));
    }
    s
}
