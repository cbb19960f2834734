//! Persistent polygon map: world transform, frame-to-map matching, polygon
//! merging, and vertical drift compensation.
//!
//! Odometry height error is modeled as a slowly walking scalar offset and
//! tracked by a one-dimensional Kalman filter. Each frame: transform the
//! frame's polygons to world, undo the current drift estimate, match them
//! against stored near-coplanar polygons in plan view, read a new drift
//! measurement off the matched height residuals, update the filter, and fold
//! matched polygons into the map (union in the plane) while inserting the
//! rest. A final consolidation pass keeps the map free of stacked
//! near-horizontal duplicates.
//!
//! The process noise should be chosen much larger than the measurement
//! noise so the filter trusts fresh height evidence quickly; the defaults
//! (1e-4 vs 1e-6) follow that rule.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom2d::{self, GeomError, Polygon2};
use crate::imaging::Pose;
use crate::planefit::{plane_basis, Frame, PlanarPolygon, Plane};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map parameters: {0}")]
    BadParams(String),
    #[error("incoming polygons must be camera-frame")]
    WrongFrame,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// Scalar Kalman filter for the cumulative vertical odometry drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftFilter {
    /// Drift estimate, meters.
    pub x_hat: f64,
    /// Estimate variance.
    pub p: f64,
    /// Process noise added per frame.
    pub sigma_p: f64,
    /// Measurement noise.
    pub sigma_m: f64,
}

impl Default for DriftFilter {
    fn default() -> Self {
        DriftFilter {
            x_hat: 0.0,
            p: 1.0,
            sigma_p: 1e-4,
            sigma_m: 1e-6,
        }
    }
}

impl DriftFilter {
    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(MapError::BadParams(format!("variance {} not positive", self.p)));
        }
        if !(self.sigma_p.is_finite() && self.sigma_p >= 0.0) {
            return Err(MapError::BadParams(format!(
                "process noise {} negative",
                self.sigma_p
            )));
        }
        if !(self.sigma_m.is_finite() && self.sigma_m > 0.0) {
            return Err(MapError::BadParams(format!(
                "measurement noise {} not positive",
                self.sigma_m
            )));
        }
        Ok(())
    }
}

/// One predict-update cycle with identity dynamics. Pure; returns the new
/// filter state.
pub fn kalman_update(f: &DriftFilter, z: f64) -> DriftFilter {
    let p_pred = f.p + f.sigma_p;
    let k = p_pred / (p_pred + f.sigma_m);
    DriftFilter {
        x_hat: f.x_hat + k * (z - f.x_hat),
        p: (1.0 - k) * p_pred,
        ..*f
    }
}

/// Drift measurement from matched height residuals: the mean signed
/// `incoming - stored` height difference plus the drift already removed from
/// the incoming polygons. `None` when nothing matched.
pub fn measure_drift(matched_dz: &[f64], x_hat: f64) -> Option<f64> {
    if matched_dz.is_empty() {
        return None;
    }
    Some(matched_dz.iter().sum::<f64>() / matched_dz.len() as f64 + x_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeParams {
    /// Height window for matching and for the duplicate invariant, meters.
    pub drift_tolerance: f64,
    /// Normal agreement for matching, and the verticality window used when
    /// re-orienting and consolidating, degrees.
    pub normal_angle_tol_deg: f64,
    /// Minimum plan-view overlap for a match, m².
    pub plan_overlap_min: f64,
    /// When false the filter never updates; incoming frames are merged with
    /// whatever estimate the filter was frozen at.
    pub compensation: bool,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            drift_tolerance: 0.05,
            normal_angle_tol_deg: 10.0,
            plan_overlap_min: 1e-4,
            compensation: true,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<(), MapError> {
        for (name, v) in [
            ("drift_tolerance", self.drift_tolerance),
            ("normal_angle_tol_deg", self.normal_angle_tol_deg),
            ("plan_overlap_min", self.plan_overlap_min),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MapError::BadParams(format!("{name} {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Rigid transform of a polygon into the world frame. Near-vertical-axis
/// normals (within `vertical_tol_deg` of either vertical direction) are
/// re-oriented to point up.
pub fn to_world(poly: &PlanarPolygon, pose: &Pose, vertical_tol_deg: f64) -> PlanarPolygon {
    let map_ring = |ring: &[Point3<f64>]| -> Vec<Point3<f64>> {
        ring.iter().map(|p| pose.transform_point(p)).collect()
    };
    let mut normal = pose.transform_vector(&poly.plane.normal);
    let mut d = poly.plane.d - normal.dot(&pose.translation);
    let cos_tol = vertical_tol_deg.to_radians().cos();
    if normal.z.abs() >= cos_tol && normal.z < 0.0 {
        normal = -normal;
        d = -d;
    }
    PlanarPolygon {
        vertices: map_ring(&poly.vertices),
        holes: poly.holes.iter().map(|h| map_ring(h)).collect(),
        plane: Plane { normal, d },
        centroid: pose.transform_point(&poly.centroid),
        area: poly.area,
        frame: Frame::World,
        inlier_fraction: poly.inlier_fraction,
        fit_error: poly.fit_error,
    }
}

/// Vertical translation of a polygon (used to apply drift corrections).
pub fn translate_z(poly: &PlanarPolygon, dz: f64) -> PlanarPolygon {
    let shift = Vector3::new(0.0, 0.0, dz);
    let map_ring =
        |ring: &[Point3<f64>]| -> Vec<Point3<f64>> { ring.iter().map(|p| p + shift).collect() };
    PlanarPolygon {
        vertices: map_ring(&poly.vertices),
        holes: poly.holes.iter().map(|h| map_ring(h)).collect(),
        plane: Plane {
            normal: poly.plane.normal,
            d: poly.plane.d - poly.plane.normal.z * dz,
        },
        centroid: poly.centroid + shift,
        ..poly.clone()
    }
}

/// Plan-view (xy) footprint; `None` for degenerate (near-vertical) shapes.
pub fn plan_footprint(poly: &PlanarPolygon) -> Option<Polygon2> {
    let flat = |ring: &[Point3<f64>]| -> Vec<[f64; 2]> {
        ring.iter().map(|p| [p.x, p.y]).collect()
    };
    Polygon2::new(
        flat(&poly.vertices),
        poly.holes.iter().map(|h| flat(h)).collect(),
    )
    .ok()
}

fn angle_between_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Stored polygon with its stable id.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPolygon {
    pub id: u64,
    pub polygon: PlanarPolygon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchDecision {
    pub map_id: u64,
    /// Signed height difference incoming minus stored, meters.
    pub dz: f64,
    pub overlap_area: f64,
}

/// Per-frame merge log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame_index: u64,
    /// (incoming polygon index, map id) pairs that merged.
    pub matched: Vec<(usize, u64)>,
    pub inserted: Vec<u64>,
    /// (kept id, absorbed id) pairs from the consolidation pass.
    pub consolidated: Vec<(u64, u64)>,
    /// Matches whose footprint union failed; the larger polygon was kept.
    pub union_fallbacks: usize,
    /// Raw drift measurement fed to the filter, if any.
    pub measurement: Option<f64>,
    pub x_hat: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonMap {
    polygons: Vec<MapPolygon>,
    drift: DriftFilter,
    params: MergeParams,
    frame_count: u64,
    next_id: u64,
}

impl PolygonMap {
    pub fn new(params: MergeParams, filter: DriftFilter) -> Result<Self, MapError> {
        params.validate()?;
        filter.validate()?;
        Ok(PolygonMap {
            polygons: Vec::new(),
            drift: filter,
            params,
            frame_count: 0,
            next_id: 1,
        })
    }

    pub fn polygons(&self) -> &[MapPolygon] {
        &self.polygons
    }

    pub fn drift(&self) -> &DriftFilter {
        &self.drift
    }

    pub fn params(&self) -> &MergeParams {
        &self.params
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    /// Matches incoming world-frame polygons (already drift-corrected)
    /// against the stored map: normals within tolerance, plan footprints
    /// overlapping, heights within the drift window. Largest overlap wins,
    /// ties to the smaller id.
    pub fn match_polygons(&self, incoming: &[PlanarPolygon]) -> Vec<Option<MatchDecision>> {
        let stored_plans: Vec<Option<(Polygon2, f64)>> = self
            .polygons
            .iter()
            .map(|mp| {
                plan_footprint(&mp.polygon)
                    .map(|p| {
                        let a = p.area();
                        (p, a)
                    })
                    .filter(|(_, a)| *a >= self.params.plan_overlap_min)
            })
            .collect();
        incoming
            .iter()
            .map(|cand| {
                let plan = plan_footprint(cand)?;
                if plan.area() < self.params.plan_overlap_min {
                    return None;
                }
                let mut best: Option<MatchDecision> = None;
                for (mp, stored_plan) in self.polygons.iter().zip(&stored_plans) {
                    let Some((splan, _)) = stored_plan else {
                        continue;
                    };
                    if angle_between_deg(&cand.plane.normal, &mp.polygon.plane.normal)
                        > self.params.normal_angle_tol_deg
                    {
                        continue;
                    }
                    let dz = cand.centroid.z - mp.polygon.centroid.z;
                    if dz.abs() > self.params.drift_tolerance {
                        continue;
                    }
                    let overlap = geom2d::intersection_area(&plan, splan);
                    if overlap < self.params.plan_overlap_min {
                        continue;
                    }
                    let take = match &best {
                        None => true,
                        Some(b) => {
                            overlap > b.overlap_area
                                || (overlap == b.overlap_area && mp.id < b.map_id)
                        }
                    };
                    if take {
                        best = Some(MatchDecision {
                            map_id: mp.id,
                            dz,
                            overlap_area: overlap,
                        });
                    }
                }
                best
            })
            .collect()
    }

    /// Folds one camera frame into the map.
    pub fn merge_frame(
        &mut self,
        frame_polys: &[PlanarPolygon],
        pose: &Pose,
    ) -> Result<FrameReport, MapError> {
        if frame_polys.iter().any(|p| p.frame != Frame::Camera) {
            return Err(MapError::WrongFrame);
        }
        let x_old = self.drift.x_hat;
        let mut incoming: Vec<PlanarPolygon> = frame_polys
            .iter()
            .map(|p| translate_z(&to_world(p, pose, self.params.normal_angle_tol_deg), -x_old))
            .collect();

        let decisions = self.match_polygons(&incoming);
        let dzs: Vec<f64> = decisions.iter().flatten().map(|d| d.dz).collect();
        let measurement = measure_drift(&dzs, x_old);
        if let Some(z_k) = measurement {
            if self.params.compensation {
                self.drift = kalman_update(&self.drift, z_k);
                let delta = self.drift.x_hat - x_old;
                if delta != 0.0 {
                    for p in &mut incoming {
                        *p = translate_z(p, -delta);
                    }
                }
            }
        }

        let mut matched = Vec::new();
        let mut inserted = Vec::new();
        let mut union_fallbacks = 0usize;
        for (i, (poly, decision)) in incoming.into_iter().zip(&decisions).enumerate() {
            match decision {
                Some(d) => {
                    let slot = self
                        .polygons
                        .iter_mut()
                        .find(|mp| mp.id == d.map_id)
                        .expect("matched id exists");
                    match merge_pair(&slot.polygon, &poly) {
                        Ok(merged) => slot.polygon = merged,
                        Err(_) => {
                            union_fallbacks += 1;
                            if poly.area > slot.polygon.area {
                                slot.polygon = poly;
                            }
                        }
                    }
                    matched.push((i, d.map_id));
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.polygons.push(MapPolygon { id, polygon: poly });
                    inserted.push(id);
                }
            }
        }

        let consolidated = self.consolidate();
        self.frame_count += 1;
        Ok(FrameReport {
            frame_index: self.frame_count - 1,
            matched,
            inserted,
            consolidated,
            union_fallbacks,
            measurement,
            x_hat: self.drift.x_hat,
            p: self.drift.p,
        })
    }

    /// Repeatedly merges stored near-horizontal polygons that overlap in
    /// plan view within the height window, so the duplicate-free invariant
    /// holds after every frame.
    fn consolidate(&mut self) -> Vec<(u64, u64)> {
        let cos_tol = self.params.normal_angle_tol_deg.to_radians().cos();
        let mut log = Vec::new();
        let mut skip: HashSet<(u64, u64)> = HashSet::new();
        'outer: loop {
            for i in 0..self.polygons.len() {
                for j in i + 1..self.polygons.len() {
                    let (a, b) = (&self.polygons[i], &self.polygons[j]);
                    let key = (a.id.min(b.id), a.id.max(b.id));
                    if skip.contains(&key) {
                        continue;
                    }
                    if !duplicate_pair(
                        &a.polygon,
                        &b.polygon,
                        cos_tol,
                        self.params.drift_tolerance,
                        self.params.plan_overlap_min,
                    ) {
                        continue;
                    }
                    match merge_pair(&a.polygon, &b.polygon) {
                        Ok(merged) => {
                            let keep = a.id;
                            let drop = b.id;
                            self.polygons[i].polygon = merged;
                            self.polygons.remove(j);
                            log.push((keep, drop));
                        }
                        Err(_) => {
                            skip.insert(key);
                        }
                    }
                    continue 'outer;
                }
            }
            break;
        }
        log
    }

    /// True when no two stored near-horizontal polygons overlap in plan view
    /// within the height tolerance (up to pairs whose union failed).
    pub fn duplicate_free(&self) -> bool {
        let cos_tol = self.params.normal_angle_tol_deg.to_radians().cos();
        for i in 0..self.polygons.len() {
            for j in i + 1..self.polygons.len() {
                if duplicate_pair(
                    &self.polygons[i].polygon,
                    &self.polygons[j].polygon,
                    cos_tol,
                    self.params.drift_tolerance,
                    self.params.plan_overlap_min,
                ) {
                    return false;
                }
            }
        }
        true
    }
}

fn duplicate_pair(
    a: &PlanarPolygon,
    b: &PlanarPolygon,
    cos_vertical_tol: f64,
    drift_tolerance: f64,
    plan_overlap_min: f64,
) -> bool {
    if a.plane.normal.z < cos_vertical_tol || b.plane.normal.z < cos_vertical_tol {
        return false;
    }
    if (a.centroid.z - b.centroid.z).abs() > drift_tolerance {
        return false;
    }
    let (Some(pa), Some(pb)) = (plan_footprint(a), plan_footprint(b)) else {
        return false;
    };
    if pa.area() < plan_overlap_min || pb.area() < plan_overlap_min {
        return false;
    }
    geom2d::intersection_area(&pa, &pb) >= plan_overlap_min
}

/// Merges two same-frame polygons: area-weighted plane, footprints unioned
/// in the merged plane. Fails when the union is not a single piece, in which
/// case callers keep the larger input.
pub fn merge_pair(a: &PlanarPolygon, b: &PlanarPolygon) -> Result<PlanarPolygon, MapError> {
    if a.frame != b.frame {
        return Err(MapError::WrongFrame);
    }
    let (wa, wb) = (a.area, b.area);
    let w = wa + wb;
    let normal = (a.plane.normal * wa + b.plane.normal * wb) / w;
    if normal.norm() < 1e-9 {
        return Err(GeomError::Degenerate("opposed normals".into()).into());
    }
    let normal = normal.normalize();
    let anchor = Point3::from((a.centroid.coords * wa + b.centroid.coords * wb) / w);
    let d = -normal.dot(&anchor.coords);
    let plane = Plane { normal, d };
    let (e1, e2) = plane_basis(&normal);

    let fa = a.project_to_plane(&anchor, &e1, &e2)?;
    let fb = b.project_to_plane(&anchor, &e1, &e2)?;
    let union = geom2d::polygon_union_2d(&fa, &fb)?;
    let [footprint] = union.as_slice() else {
        return Err(GeomError::Degenerate(format!(
            "footprint union has {} pieces",
            union.len()
        ))
        .into());
    };

    let lift = |ring: &[[f64; 2]]| -> Vec<Point3<f64>> {
        ring.iter()
            .map(|&[x, y]| anchor + x * e1 + y * e2)
            .collect()
    };
    let c2 = footprint
        .centroid()
        .ok_or_else(|| GeomError::Degenerate("empty union".into()))?;
    let merged = PlanarPolygon {
        vertices: lift(&footprint.outer),
        holes: footprint.holes.iter().map(|h| lift(h)).collect(),
        plane,
        centroid: anchor + c2[0] * e1 + c2[1] * e2,
        area: footprint.area(),
        frame: a.frame,
        inlier_fraction: (a.inlier_fraction * wa + b.inlier_fraction * wb) / w,
        fit_error: (a.fit_error * wa + b.fit_error * wb) / w,
    };
    Ok(merged)
}

// ---------------------------------------------------------------------------
// Serialization: map JSON (schema 1) and PLY mesh export.

#[derive(Serialize, Deserialize)]
struct MapJson {
    schema: u32,
    frame_count: u64,
    drift: DriftJson,
    polygons: Vec<PolygonJson>,
}

#[derive(Serialize, Deserialize)]
struct DriftJson {
    x_hat: f64,
    #[serde(rename = "P")]
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct PolygonJson {
    id: u64,
    normal: [f64; 3],
    d: f64,
    centroid: [f64; 3],
    area: f64,
    vertices: Vec<[f64; 3]>,
    #[serde(default)]
    holes: Vec<Vec<[f64; 3]>>,
}

pub fn map_to_json(map: &PolygonMap) -> String {
    let pt = |p: &Point3<f64>| [p.x, p.y, p.z];
    let doc = MapJson {
        schema: 1,
        frame_count: map.frame_count,
        drift: DriftJson {
            x_hat: map.drift.x_hat,
            p: map.drift.p,
        },
        polygons: map
            .polygons
            .iter()
            .map(|mp| PolygonJson {
                id: mp.id,
                normal: [
                    mp.polygon.plane.normal.x,
                    mp.polygon.plane.normal.y,
                    mp.polygon.plane.normal.z,
                ],
                d: mp.polygon.plane.d,
                centroid: pt(&mp.polygon.centroid),
                area: mp.polygon.area,
                vertices: mp.polygon.vertices.iter().map(|p| pt(p)).collect(),
                holes: mp
                    .polygon
                    .holes
                    .iter()
                    .map(|h| h.iter().map(|p| pt(p)).collect())
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("map serialization");
    s.push('\n');
    s
}

pub fn save_map(map: &PolygonMap, path: &Path) -> Result<(), MapError> {
    std::fs::write(path, map_to_json(map)).map_err(|e| MapError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Loads a schema-1 map JSON. Fit-quality metadata is not part of the
/// on-disk schema; imported polygons carry neutral values there.
pub fn load_map(path: &Path, params: MergeParams) -> Result<PolygonMap, MapError> {
    let text = std::fs::read_to_string(path).map_err(|e| MapError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    map_from_json(&text, params).map_err(|reason| MapError::Format {
        path: path.display().to_string(),
        reason,
    })
}

pub fn map_from_json(text: &str, params: MergeParams) -> Result<PolygonMap, String> {
    let doc: MapJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.schema != 1 {
        return Err(format!("unsupported schema {}", doc.schema));
    }
    params.validate().map_err(|e| e.to_string())?;
    let mut polygons = Vec::with_capacity(doc.polygons.len());
    let mut max_id = 0u64;
    for pj in doc.polygons {
        let normal = Vector3::new(pj.normal[0], pj.normal[1], pj.normal[2]);
        if (normal.norm() - 1.0).abs() > 1e-6 {
            return Err(format!("polygon {}: normal is not unit", pj.id));
        }
        if !(pj.area.is_finite() && pj.area > 0.0) {
            return Err(format!("polygon {}: bad area {}", pj.id, pj.area));
        }
        if pj.vertices.len() < 3 {
            return Err(format!("polygon {}: fewer than 3 vertices", pj.id));
        }
        let ring = |r: &[[f64; 3]]| -> Vec<Point3<f64>> {
            r.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect()
        };
        max_id = max_id.max(pj.id);
        polygons.push(MapPolygon {
            id: pj.id,
            polygon: PlanarPolygon {
                vertices: ring(&pj.vertices),
                holes: pj.holes.iter().map(|h| ring(h)).collect(),
                plane: Plane {
                    normal: normal.normalize(),
                    d: pj.d,
                },
                centroid: Point3::new(pj.centroid[0], pj.centroid[1], pj.centroid[2]),
                area: pj.area,
                frame: Frame::World,
                inlier_fraction: 1.0,
                fit_error: 0.0,
            },
        });
    }
    let drift = DriftFilter {
        x_hat: doc.drift.x_hat,
        p: doc.drift.p,
        ..Default::default()
    };
    drift.validate().map_err(|e| e.to_string())?;
    Ok(PolygonMap {
        polygons,
        drift,
        params,
        frame_count: doc.frame_count,
        next_id: max_id + 1,
    })
}

/// ASCII PLY export: each polygon triangulated in its own plane.
pub fn map_to_ply(map: &PolygonMap) -> String {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for mp in &map.polygons {
        let poly = &mp.polygon;
        let (e1, e2) = plane_basis(&poly.plane.normal);
        let anchor = poly.centroid;
        let Ok(flat) = poly.project_to_plane(&anchor, &e1, &e2) else {
            continue;
        };
        for tri in geom2d::triangulate(&flat) {
            let base = vertices.len();
            for [x, y] in tri {
                let p = anchor + x * e1 + y * e2;
                vertices.push([p.x, p.y, p.z]);
            }
            faces.push([base, base + 1, base + 2]);
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment planar polygon map\n");
    let _ = writeln!(s, "element vertex {}", vertices.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    let _ = writeln!(s, "element face {}", faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for v in &vertices {
        let _ = writeln!(s, "{:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    }
    for f in &faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn save_ply(map: &PolygonMap, path: &Path) -> Result<(), MapError> {
    std::fs::write(path, map_to_ply(map)).map_err(|e| MapError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Pose;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    #[test]
    fn kalman_single_step_frozen_example() {
        let f = DriftFilter {
            x_hat: 0.0,
            p: 1.0,
            sigma_p: 0.0,
            sigma_m: 1.0,
        };
        let g = kalman_update(&f, 0.01);
        assert!((g.x_hat - 0.005).abs() < 1e-15);
        assert!((g.p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kalman_converges_on_constant_measurement() {
        let mut f = DriftFilter::default();
        for _ in 0..50 {
            f = kalman_update(&f, 0.03);
        }
        assert!((f.x_hat - 0.03).abs() < 5e-4, "x_hat {}", f.x_hat);
        assert!(f.p < 1e-4);

        // Inline scalar reference of the same recursion.
        let (mut x, mut p) = (0.0f64, 1.0f64);
        for _ in 0..50 {
            let pp = p + 1e-4;
            let k = pp / (pp + 1e-6);
            x += k * (0.03 - x);
            p = (1.0 - k) * pp;
        }
        assert!((f.x_hat - x).abs() < 1e-15);
        assert!((f.p - p).abs() < 1e-15);
    }

    #[test]
    fn measure_drift_is_mean_plus_estimate() {
        assert_eq!(measure_drift(&[], 0.5), None);
        let z = measure_drift(&[0.01, 0.03], 0.1).unwrap();
        assert!((z - 0.12).abs() < 1e-15);
    }

    fn square_at(cx: f64, cy: f64, z: f64, side: f64) -> PlanarPolygon {
        let h = side / 2.0;
        let v = vec![
            Point3::new(cx - h, cy - h, z),
            Point3::new(cx + h, cy - h, z),
            Point3::new(cx + h, cy + h, z),
            Point3::new(cx - h, cy + h, z),
        ];
        PlanarPolygon {
            vertices: v,
            holes: vec![],
            plane: Plane {
                normal: Vector3::new(0.0, 0.0, 1.0),
                d: -z,
            },
            centroid: Point3::new(cx, cy, z),
            area: side * side,
            frame: Frame::World,
            inlier_fraction: 1.0,
            fit_error: 0.0,
        }
    }

    fn camera_square() -> PlanarPolygon {
        // Fronto square at camera z = 2.
        let v = vec![
            Point3::new(-0.5, -0.5, 2.0),
            Point3::new(0.5, -0.5, 2.0),
            Point3::new(0.5, 0.5, 2.0),
            Point3::new(-0.5, 0.5, 2.0),
        ];
        PlanarPolygon {
            vertices: v,
            holes: vec![],
            plane: Plane {
                normal: Vector3::new(0.0, 0.0, -1.0),
                d: 2.0,
            },
            centroid: Point3::new(0.0, 0.0, 2.0),
            area: 1.0,
            frame: Frame::Camera,
            inlier_fraction: 1.0,
            fit_error: 0.0,
        }
    }

    fn downward_pose(height: f64) -> Pose {
        // Camera looking straight down: 180 degrees about x.
        Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
            Vector3::new(0.0, 0.0, height),
        )
    }

    #[test]
    fn to_world_maps_floor_to_up_normal() {
        let poly = camera_square();
        let w = to_world(&poly, &downward_pose(2.0), 10.0);
        assert_eq!(w.frame, Frame::World);
        assert!((w.plane.normal - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(w.plane.d.abs() < 1e-12);
        assert!((w.area - poly.area).abs() < 1e-12);
        assert!(w.centroid.z.abs() < 1e-12);
        for v in &w.vertices {
            assert!(v.z.abs() < 1e-12);
        }
    }

    #[test]
    fn to_world_leaves_vertical_planes_alone() {
        // Plane normal along camera x maps to a horizontal world normal;
        // the verticality window must not touch it.
        let mut poly = camera_square();
        poly.plane = Plane {
            normal: Vector3::new(-1.0, 0.0, 0.0),
            d: 0.4,
        };
        // Vertices no longer lie on the plane; only the plane map matters here.
        let w = to_world(&poly, &downward_pose(2.0), 10.0);
        assert!(w.plane.normal.z.abs() < 1e-12);
        assert!((w.plane.normal.x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_pair_identity() {
        let a = square_at(0.0, 0.0, 1.0, 1.0);
        let m = merge_pair(&a, &a).unwrap();
        assert!((m.area - a.area).abs() < 1e-9);
        assert!((m.centroid - a.centroid).norm() < 1e-9);
        assert!((m.plane.normal - a.plane.normal).norm() < 1e-12);
    }

    #[test]
    fn merge_pair_half_overlap() {
        let a = square_at(0.5, 0.5, 1.0, 1.0);
        let b = square_at(1.0, 0.5, 1.0, 1.0);
        let m = merge_pair(&a, &b).unwrap();
        assert!((m.area - 1.5).abs() < 1e-9, "area {}", m.area);
        assert!((m.centroid.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_pair_weighs_normals_by_area() {
        let mut a = square_at(0.0, 0.0, 1.0, 2.0); // area 4
        let mut b = square_at(0.0, 0.0, 1.0, 2.0_f64.sqrt()); // area 2
        let t = 2.0f64.to_radians();
        a.plane = Plane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            d: -1.0,
        };
        b.plane = Plane {
            normal: Vector3::new(t.sin(), 0.0, t.cos()),
            d: -b.centroid.coords.dot(&Vector3::new(t.sin(), 0.0, t.cos())),
        };
        let m = merge_pair(&a, &b).unwrap();
        let expect = (a.plane.normal * 4.0 + b.plane.normal * 2.0).normalize();
        assert!((m.plane.normal - expect).norm() < 1e-12);
        // Two thirds of the weight on the big one pulls the merged normal to
        // about a third of the 2 degree split.
        let angle = angle_between_deg(&m.plane.normal, &a.plane.normal);
        assert!((angle - 0.666).abs() < 0.01, "angle {angle}");
    }

    #[test]
    fn merge_pair_rejects_disjoint_footprints() {
        let a = square_at(0.0, 0.0, 1.0, 1.0);
        let b = square_at(5.0, 0.0, 1.0, 1.0);
        assert!(merge_pair(&a, &b).is_err());
    }

    fn test_map() -> PolygonMap {
        PolygonMap::new(MergeParams::default(), DriftFilter::default()).unwrap()
    }

    #[test]
    fn matching_picks_largest_overlap_within_windows() {
        let mut map = test_map();
        map.polygons = vec![
            MapPolygon {
                id: 1,
                polygon: square_at(0.0, 0.0, 0.0, 1.0),
            },
            MapPolygon {
                id: 2,
                polygon: square_at(0.6, 0.0, 0.0, 1.0),
            },
        ];
        map.next_id = 3;
        let probe = square_at(0.5, 0.0, 0.03, 1.0);
        let d = map.match_polygons(&[probe.clone()]);
        let m = d[0].unwrap();
        assert_eq!(m.map_id, 2);
        assert!((m.dz - 0.03).abs() < 1e-12);

        // Outside the height window: no match.
        let far = square_at(0.5, 0.0, 0.06, 1.0);
        assert!(map.match_polygons(&[far])[0].is_none());

        // 49 mm matches, 51 mm does not.
        let close = square_at(0.5, 0.0, 0.049, 1.0);
        assert!(map.match_polygons(&[close])[0].is_some());
        let apart = square_at(0.5, 0.0, 0.051, 1.0);
        assert!(map.match_polygons(&[apart])[0].is_none());

        // 15 degrees off: no match.
        let mut tilted = probe;
        let t = 15f64.to_radians();
        tilted.plane = Plane {
            normal: Vector3::new(t.sin(), 0.0, t.cos()),
            d: 0.0,
        };
        assert!(map.match_polygons(&[tilted])[0].is_none());
    }

    #[test]
    fn merge_frame_inserts_then_merges() {
        let mut map = test_map();
        let pose = downward_pose(2.0);
        let frame = vec![camera_square()];
        let r1 = map.merge_frame(&frame, &pose).unwrap();
        assert_eq!(r1.inserted.len(), 1);
        assert!(r1.matched.is_empty());
        assert!(r1.measurement.is_none());
        assert_eq!(map.frame_count(), 1);

        let r2 = map.merge_frame(&frame, &pose).unwrap();
        assert_eq!(r2.matched.len(), 1);
        assert!(r2.inserted.is_empty());
        assert_eq!(map.polygons().len(), 1);
        assert!((r2.measurement.unwrap()).abs() < 1e-12);
        assert!((map.polygons()[0].polygon.area - 1.0).abs() < 1e-9);
        assert!(map.duplicate_free());
    }

    #[test]
    fn drift_is_measured_and_compensated() {
        let mut map = test_map();
        map.merge_frame(&[camera_square()], &downward_pose(2.0)).unwrap();
        // Pose drifted 30 mm up; the floor would land at z = 0.03.
        let r = map
            .merge_frame(&[camera_square()], &downward_pose(2.03))
            .unwrap();
        assert!((r.measurement.unwrap() - 0.03).abs() < 1e-9);
        assert!((map.drift().x_hat - 0.03).abs() < 1e-4);
        // Stored polygon stays near the true height.
        let z = map.polygons()[0].polygon.centroid.z;
        assert!(z.abs() < 1e-4, "stored height {z}");
    }

    #[test]
    fn frozen_filter_keeps_drifted_heights() {
        let params = MergeParams {
            compensation: false,
            ..Default::default()
        };
        let mut map = PolygonMap::new(params, DriftFilter::default()).unwrap();
        map.merge_frame(&[camera_square()], &downward_pose(2.0)).unwrap();
        let r = map
            .merge_frame(&[camera_square()], &downward_pose(2.03))
            .unwrap();
        // Measurement still taken, but the filter must not move.
        assert!(r.measurement.is_some());
        assert_eq!(map.drift().x_hat, 0.0);
    }

    #[test]
    fn consolidation_removes_stacked_duplicates() {
        let mut map = test_map();
        map.polygons = vec![
            MapPolygon {
                id: 1,
                polygon: square_at(0.0, 0.0, 0.0, 1.0),
            },
            MapPolygon {
                id: 2,
                polygon: square_at(0.2, 0.0, 0.01, 1.0),
            },
        ];
        map.next_id = 3;
        let log = map.consolidate();
        assert_eq!(log, vec![(1, 2)]);
        assert_eq!(map.polygons().len(), 1);
        assert_eq!(map.polygons()[0].id, 1);
        assert!(map.duplicate_free());
    }

    #[test]
    fn map_json_roundtrip_is_stable() {
        let mut map = test_map();
        let pose = downward_pose(2.0);
        map.merge_frame(&[camera_square()], &pose).unwrap();
        map.merge_frame(&[camera_square()], &downward_pose(2.01)).unwrap();
        let json = map_to_json(&map);
        let loaded = map_from_json(&json, MergeParams::default()).unwrap();
        assert_eq!(loaded.frame_count(), map.frame_count());
        assert_eq!(loaded.polygons().len(), map.polygons().len());
        let json2 = map_to_json(&loaded);
        assert_eq!(json, json2);

        assert!(map_from_json("{\"schema\": 2}", MergeParams::default()).is_err());
        assert!(map_from_json("not json", MergeParams::default()).is_err());
    }

    #[test]
    fn ply_export_covers_polygon_area() {
        let mut map = test_map();
        map.polygons = vec![MapPolygon {
            id: 1,
            polygon: square_at(0.0, 0.0, 0.5, 2.0),
        }];
        let ply = map_to_ply(&map);
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert!(ply.contains("element vertex 6"));
        assert!(ply.contains("element face 2"));
        // Sum of triangle areas equals the polygon area.
        let lines: Vec<&str> = ply.lines().collect();
        let header_end = lines.iter().position(|l| *l == "end_header").unwrap();
        let verts: Vec<Vector3<f64>> = lines[header_end + 1..header_end + 7]
            .iter()
            .map(|l| {
                let v: Vec<f64> = l.split(' ').map(|t| t.parse().unwrap()).collect();
                Vector3::new(v[0], v[1], v[2])
            })
            .collect();
        let mut area = 0.0;
        for f in &lines[header_end + 7..header_end + 9] {
            let idx: Vec<usize> = f.split(' ').skip(1).map(|t| t.parse().unwrap()).collect();
            let (a, b, c) = (verts[idx[0]], verts[idx[1]], verts[idx[2]]);
            area += (b - a).cross(&(c - a)).norm() / 2.0;
        }
        assert!((area - 4.0).abs() < 1e-6, "area {area}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // The five filter equations, checked against a direct recomputation
        // plus the invariants that make the filter well-posed.
        #[test]
        fn kalman_closed_form(
            x in -1.0f64..1.0,
            p in 1e-9f64..10.0,
            sigma_p in 0.0f64..1.0,
            sigma_m in 1e-9f64..1.0,
            z in -1.0f64..1.0,
        ) {
            let f = DriftFilter { x_hat: x, p, sigma_p, sigma_m };
            let g = kalman_update(&f, z);
            let p_pred = p + sigma_p;
            let k = p_pred / (p_pred + sigma_m);
            prop_assert!(k > 0.0 && k < 1.0);
            prop_assert_eq!(g.x_hat, x + k * (z - x));
            prop_assert_eq!(g.p, (1.0 - k) * p_pred);
            prop_assert!(g.p > 0.0);
            prop_assert!(g.p < p_pred);
            // The posterior mean lies between prior and measurement.
            let (lo, hi) = if x <= z { (x, z) } else { (z, x) };
            prop_assert!(g.x_hat >= lo - 1e-12 && g.x_hat <= hi + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn merge_is_idempotent(
            cx in -2.0f64..2.0,
            cy in -2.0f64..2.0,
            z in -1.0f64..1.0,
            side in 0.1f64..3.0,
        ) {
            let a = square_at(cx, cy, z, side);
            let m = merge_pair(&a, &a).unwrap();
            prop_assert!((m.area - a.area).abs() < 1e-6 * a.area.max(1.0));
            prop_assert!((m.centroid - a.centroid).norm() < 1e-9);
        }

        // Random stacked squares: after consolidation the invariant holds.
        #[test]
        fn consolidation_restores_invariant(seed in 0u64..u64::MAX) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut map = test_map();
            for i in 0..6 {
                let p = square_at(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(0.4..1.2),
                );
                map.polygons.push(MapPolygon { id: i + 1, polygon: p });
            }
            map.next_id = 7;
            map.consolidate();
            prop_assert!(map.duplicate_free());
        }
    }
}
