//! Synthetic scenes for testing and benchmarking: yawed-box worlds with a
//! ray-cast depth renderer, exact per-face ground-truth polygons, a depth
//! sensor noise model, and camera path helpers.
//!
//! Ground truth is computed in closed form. For every camera-facing box face
//! the visible region is the face rectangle, minus the shadow each other box
//! casts onto the face plane from the camera center, intersected with the
//! image frustum. Shadows of convex boxes from a point are convex, so each
//! one is the hull of the projected vertices of the box clipped to the slab
//! between the face plane and the camera depth. The renderer and the ground
//! truth agree pixel for pixel up to floating-point rounding, which the
//! tests check by deprojecting rendered pixels into the ground-truth
//! polygons.

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom2d::{self, GeomError, Polygon2, Ring};
use crate::imaging::{CameraIntrinsics, DepthImage, ImagingError, Pose};
use crate::planefit::{plane_basis, Frame, PlanarPolygon, Plane};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene parameters: {0}")]
    BadParams(String),
    #[error("no scene surface is visible from this pose")]
    EmptyView,
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {reason}")]
    Config { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned box rotated by a yaw about its own vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    /// Rotation about +z, radians.
    pub yaw: f64,
}

impl OrientedBox {
    pub fn validate(&self) -> Result<(), SceneError> {
        let h = self.half_extents;
        if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0 && h.iter().all(|v| v.is_finite())) {
            return Err(SceneError::BadParams(format!(
                "half extents {:?} must be positive",
                [h.x, h.y, h.z]
            )));
        }
        if !(self.center.iter().all(|v| v.is_finite()) && self.yaw.is_finite()) {
            return Err(SceneError::BadParams("non-finite box pose".into()));
        }
        Ok(())
    }

    fn to_local_point(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p.coords - self.center;
        let (c, s) = (self.yaw.cos(), self.yaw.sin());
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    fn to_local_dir(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (c, s) = (self.yaw.cos(), self.yaw.sin());
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    /// Whether the point is inside or on the box.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let l = self.to_local_point(p);
        (0..3).all(|a| l[a].abs() <= self.half_extents[a])
    }

    /// World direction of local axis 0, 1 or 2.
    pub fn axis_world(&self, axis: usize) -> Vector3<f64> {
        let (c, s) = (self.yaw.cos(), self.yaw.sin());
        match axis {
            0 => Vector3::new(c, s, 0.0),
            1 => Vector3::new(-s, c, 0.0),
            _ => Vector3::z(),
        }
    }

    /// The 8 corners; bit k of the index selects the sign on axis k.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        std::array::from_fn(|i| {
            let mut p = self.center;
            for a in 0..3 {
                let s = if i & (1 << a) != 0 { 1.0 } else { -1.0 };
                p += s * self.half_extents[a] * self.axis_world(a);
            }
            Point3::from(p)
        })
    }
}

/// One of the six sides of a box, named by local axis and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFace {
    XNeg,
    XPos,
    YNeg,
    YPos,
    ZNeg,
    ZPos,
}

impl BoxFace {
    pub const ALL: [BoxFace; 6] = [
        BoxFace::XNeg,
        BoxFace::XPos,
        BoxFace::YNeg,
        BoxFace::YPos,
        BoxFace::ZNeg,
        BoxFace::ZPos,
    ];

    pub fn axis(self) -> usize {
        match self {
            BoxFace::XNeg | BoxFace::XPos => 0,
            BoxFace::YNeg | BoxFace::YPos => 1,
            BoxFace::ZNeg | BoxFace::ZPos => 2,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            BoxFace::XPos | BoxFace::YPos | BoxFace::ZPos => 1.0,
            _ => -1.0,
        }
    }

    fn from_axis_sign(axis: usize, positive: bool) -> BoxFace {
        match (axis, positive) {
            (0, false) => BoxFace::XNeg,
            (0, true) => BoxFace::XPos,
            (1, false) => BoxFace::YNeg,
            (1, true) => BoxFace::YPos,
            (2, false) => BoxFace::ZNeg,
            _ => BoxFace::ZPos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceId {
    #[serde(rename = "box")]
    pub box_index: usize,
    pub face: BoxFace,
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub boxes: Vec<OrientedBox>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.boxes.is_empty() {
            return Err(SceneError::BadParams("scene has no boxes".into()));
        }
        for b in &self.boxes {
            b.validate()?;
        }
        Ok(())
    }

    /// Rendering and ground truth both require the camera outside every box.
    fn check_camera(&self, cam: &Point3<f64>) -> Result<(), SceneError> {
        if let Some(i) = self.boxes.iter().position(|b| b.contains(cam)) {
            return Err(SceneError::BadParams(format!("camera is inside box {i}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Rendering.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    /// Depth beyond this renders as invalid, meters.
    pub far: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams { far: 20.0 }
    }
}

/// Per-pixel face identity of the rendered depth.
#[derive(Debug, Clone)]
pub struct FaceMap {
    pub width: usize,
    pub height: usize,
    faces: Vec<Option<FaceId>>,
}

impl FaceMap {
    pub fn face_at(&self, u: usize, v: usize) -> Option<FaceId> {
        self.faces[v * self.width + u]
    }
}

/// First intersection of the ray `origin + t * dir` with the box, as
/// (t, entry face). Slab test in the box frame; rays starting inside miss.
fn intersect_box(b: &OrientedBox, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, BoxFace)> {
    let p = b.to_local_point(origin);
    let d = b.to_local_dir(dir);
    let mut entry = f64::NEG_INFINITY;
    let mut exit = f64::INFINITY;
    let mut entry_face = BoxFace::ZPos;
    for a in 0..3 {
        let h = b.half_extents[a];
        if d[a].abs() < 1e-15 {
            if p[a].abs() > h {
                return None;
            }
            continue;
        }
        let t1 = (-h - p[a]) / d[a];
        let t2 = (h - p[a]) / d[a];
        let (lo, hi, lo_positive) = if t1 <= t2 {
            (t1, t2, d[a] < 0.0)
        } else {
            (t2, t1, d[a] < 0.0)
        };
        if lo > entry {
            entry = lo;
            entry_face = BoxFace::from_axis_sign(a, lo_positive);
        }
        exit = exit.min(hi);
    }
    if entry <= exit + 1e-12 && entry > 1e-9 {
        Some((entry, entry_face))
    } else {
        None
    }
}

/// Renders a z-depth image (millimeters, 0 where nothing is hit) plus the
/// face each pixel sees. `pose` maps camera to world. Fails when the view
/// contains no scene surface at all.
pub fn render_depth(
    scene: &Scene,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    params: &RenderParams,
) -> Result<(DepthImage, FaceMap), SceneError> {
    scene.validate()?;
    if !(params.far.is_finite() && params.far > 0.0) {
        return Err(SceneError::BadParams(format!("far {} not positive", params.far)));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let origin = Point3::from(pose.translation);
    scene.check_camera(&origin)?;
    let mut data = vec![0.0f32; w * h];
    let mut faces = vec![None; w * h];
    let mut any = false;
    for v in 0..h {
        for u in 0..w {
            let dir = pose.transform_vector(&intrinsics.ray(u as f64, v as f64));
            let mut best: Option<(f64, FaceId)> = None;
            for (bi, b) in scene.boxes.iter().enumerate() {
                if let Some((t, face)) = intersect_box(b, &origin, &dir) {
                    if t <= params.far && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, FaceId { box_index: bi, face }));
                    }
                }
            }
            if let Some((t, id)) = best {
                let mm = t * 1000.0;
                if mm <= 65535.0 {
                    data[v * w + u] = mm as f32;
                    faces[v * w + u] = Some(id);
                    any = true;
                }
            }
        }
    }
    if !any {
        return Err(SceneError::EmptyView);
    }
    Ok((
        DepthImage::new(w, h, data)?,
        FaceMap {
            width: w,
            height: h,
            faces,
        },
    ))
}

// ---------------------------------------------------------------------------
// Exact ground truth.

#[derive(Debug, Clone)]
pub struct GtFace {
    pub id: FaceId,
    /// Face plane with the outward normal.
    pub plane: Plane,
    /// Visible region, world frame; may be several pieces.
    pub polygons: Vec<PlanarPolygon>,
}

impl GtFace {
    pub fn area(&self) -> f64 {
        self.polygons.iter().map(|p| p.area).sum()
    }

    /// Whether a world point lies on the visible region (within `eps` of it
    /// in the plane; the caller guarantees the point is near the plane).
    pub fn contains(&self, p: &Point3<f64>, eps: f64) -> bool {
        self.polygons.iter().any(|poly| {
            let (e1, e2) = plane_basis(&poly.plane.normal);
            let Ok(flat) = poly.project_to_plane(&poly.centroid, &e1, &e2) else {
                return false;
            };
            let d = p - poly.centroid;
            flat.contains_point([d.dot(&e1), d.dot(&e2)], eps)
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub faces: Vec<GtFace>,
}

impl GroundTruth {
    pub fn find(&self, id: FaceId) -> Option<&GtFace> {
        self.faces.iter().find(|f| f.id == id)
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| f.area()).sum()
    }

    /// All visible polygons across faces.
    pub fn polygons(&self) -> impl Iterator<Item = &PlanarPolygon> {
        self.faces.iter().flat_map(|f| f.polygons.iter())
    }
}

const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Shadow the box casts from `cam` onto the plane, in the plane's 2-D basis.
/// Only the part of the box strictly between the plane and the camera depth
/// can block rays, so the box edges are clipped to that slab first; the
/// shadow is the convex hull of the projected clip vertices. Returns `None`
/// when nothing blocks.
fn shadow_hull(
    b: &OrientedBox,
    plane: &Plane,
    cam: &Point3<f64>,
    origin: &Point3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
) -> Option<Ring> {
    let fc = plane.signed_distance(cam);
    debug_assert!(fc > 0.0);
    let f_hi = fc * (1.0 - 1e-9);
    let corners = b.corners();
    let f: Vec<f64> = corners.iter().map(|q| plane.signed_distance(q)).collect();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut push = |x: Point3<f64>, fx: f64| {
        // Central projection onto the plane; s >= 1 inside the slab.
        let s = fc / (fc - fx);
        let proj = cam + s * (x - cam);
        let d = proj - origin;
        pts.push([d.dot(e1), d.dot(e2)]);
    };
    for &(i, j) in &BOX_EDGES {
        let (fa, fb) = (f[i], f[j]);
        // Clip the edge parameter to f in [0, f_hi].
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        if (fb - fa).abs() < 1e-15 {
            if fa < 0.0 || fa > f_hi {
                continue;
            }
        } else {
            let ta = (0.0 - fa) / (fb - fa);
            let tb = (f_hi - fa) / (fb - fa);
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 >= t1 {
                continue;
            }
        }
        for t in [t0, t1] {
            let x = corners[i] + t * (corners[j] - corners[i]);
            push(x, fa + t * (fb - fa));
        }
    }
    if pts.len() < 3 {
        return None;
    }
    geom2d::convex_hull(&pts).ok()
}

/// Exact visible-region polygons for every camera-facing box face.
pub fn ground_truth(
    scene: &Scene,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
) -> Result<GroundTruth, SceneError> {
    scene.validate()?;
    let cam = Point3::from(pose.translation);
    scene.check_camera(&cam)?;
    let (w, h) = (intrinsics.width as f64, intrinsics.height as f64);
    // View cone through the outermost pixel centers (what the renderer can
    // sample), as four inward halfspaces meeting at the camera. Clipping
    // face rectangles against these stays exact even when a face plane
    // crosses the image horizon.
    let corner_dirs: [Vector3<f64>; 4] = [
        pose.transform_vector(&intrinsics.ray(0.0, 0.0)),
        pose.transform_vector(&intrinsics.ray(w - 1.0, 0.0)),
        pose.transform_vector(&intrinsics.ray(w - 1.0, h - 1.0)),
        pose.transform_vector(&intrinsics.ray(0.0, h - 1.0)),
    ];
    let center_dir = pose.transform_vector(&intrinsics.ray((w - 1.0) / 2.0, (h - 1.0) / 2.0));
    let cone: Vec<Vector3<f64>> = (0..4)
        .map(|i| {
            let n = corner_dirs[i].cross(&corner_dirs[(i + 1) % 4]);
            if n.dot(&center_dir) > 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();

    let mut faces = Vec::new();
    for (bi, b) in scene.boxes.iter().enumerate() {
        for face in BoxFace::ALL {
            let axis = face.axis();
            let n = face.sign() * b.axis_world(axis);
            let origin3 = Point3::from(b.center + face.sign() * b.half_extents[axis] * b.axis_world(axis));
            let plane = Plane {
                normal: n,
                d: -n.dot(&origin3.coords),
            };
            let fc = plane.signed_distance(&cam);
            if fc <= 1e-9 {
                continue; // back-facing or edge-on
            }
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            let (e1, e2) = (b.axis_world(ua), b.axis_world(va));
            let (hu, hv) = (b.half_extents[ua], b.half_extents[va]);

            // Face rectangle clipped to the view cone, in the face basis.
            let mut ring = vec![[-hu, -hv], [hu, -hv], [hu, hv], [-hu, hv]];
            for cn in &cone {
                let coeff = [cn.dot(&e1), cn.dot(&e2)];
                let limit = cn.dot(&(cam - origin3));
                ring = geom2d::clip_halfplane(&ring, coeff, limit);
                if ring.len() < 3 {
                    break;
                }
            }
            if ring.len() < 3 {
                continue; // outside the view
            }
            let mut region = vec![Polygon2::new(ring, vec![])?];

            for (oi, other) in scene.boxes.iter().enumerate() {
                if oi == bi || region.is_empty() {
                    continue;
                }
                if let Some(hull) = shadow_hull(other, &plane, &cam, &origin3, &e1, &e2) {
                    // Keep coordinates near the face before boolean ops;
                    // projections of near-camera points can be huge.
                    let clipped = clip_to_window(&hull, hu + 1.0, hv + 1.0);
                    if clipped.len() >= 3 {
                        region = subtract_all(&region, &Polygon2::new(clipped, vec![])?)?;
                    }
                }
            }

            let polygons: Vec<PlanarPolygon> = region
                .iter()
                .filter(|p| p.area() > 1e-9)
                .map(|p| lift_footprint(p, &plane, &origin3, &e1, &e2))
                .collect::<Result<_, _>>()?;
            if !polygons.is_empty() {
                faces.push(GtFace {
                    id: FaceId {
                        box_index: bi,
                        face,
                    },
                    plane,
                    polygons,
                });
            }
        }
    }
    Ok(GroundTruth { faces })
}

fn clip_to_window(ring: &[[f64; 2]], hx: f64, hy: f64) -> Ring {
    let mut r = ring.to_vec();
    for (n, c) in [
        ([1.0, 0.0], hx),
        ([-1.0, 0.0], hx),
        ([0.0, 1.0], hy),
        ([0.0, -1.0], hy),
    ] {
        r = geom2d::clip_halfplane(&r, n, c);
        if r.len() < 3 {
            return Vec::new();
        }
    }
    r
}

fn subtract_all(region: &[Polygon2], cut: &Polygon2) -> Result<Vec<Polygon2>, GeomError> {
    let mut out = Vec::new();
    for r in region {
        out.extend(geom2d::polygon_difference_2d(r, cut)?);
    }
    Ok(out)
}

fn lift_footprint(
    flat: &Polygon2,
    plane: &Plane,
    origin: &Point3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
) -> Result<PlanarPolygon, GeomError> {
    let lift_ring = |r: &Ring| -> Vec<Point3<f64>> {
        r.iter().map(|&[x, y]| origin + x * e1 + y * e2).collect()
    };
    let c2 = flat
        .centroid()
        .ok_or_else(|| GeomError::Degenerate("empty ground-truth piece".into()))?;
    Ok(PlanarPolygon {
        vertices: lift_ring(&flat.outer),
        holes: flat.holes.iter().map(lift_ring).collect(),
        plane: *plane,
        centroid: origin + c2[0] * e1 + c2[1] * e2,
        area: flat.area(),
        frame: Frame::World,
        inlier_fraction: 1.0,
        fit_error: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Sensor noise.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    /// Gaussian depth noise, millimeters.
    pub sigma_mm: f64,
    /// Probability a valid pixel drops to invalid.
    pub dropout: f64,
    /// Depth quantization step, millimeters; 0 disables.
    pub quantize_mm: f64,
    /// Probability a depth-edge pixel snaps to a neighboring surface.
    pub edge_jitter: f64,
    /// Neighbor depth difference that counts as an edge, millimeters.
    pub edge_threshold_mm: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma_mm: 2.0,
            dropout: 0.01,
            quantize_mm: 1.0,
            edge_jitter: 0.25,
            edge_threshold_mm: 20.0,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.sigma_mm.is_finite() && self.sigma_mm >= 0.0) {
            return Err(SceneError::BadParams(format!("sigma_mm {}", self.sigma_mm)));
        }
        if !(self.quantize_mm.is_finite() && self.quantize_mm >= 0.0) {
            return Err(SceneError::BadParams(format!("quantize_mm {}", self.quantize_mm)));
        }
        if !(self.edge_threshold_mm.is_finite() && self.edge_threshold_mm > 0.0) {
            return Err(SceneError::BadParams(format!(
                "edge_threshold_mm {}",
                self.edge_threshold_mm
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("edge_jitter", self.edge_jitter)] {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(SceneError::BadParams(format!("{name} {p} not a probability")));
            }
        }
        Ok(())
    }
}

/// Applies the sensor model in a fixed raster order so equal seeds give
/// equal images: edge jitter (mixed pixels across depth discontinuities),
/// Gaussian noise, quantization, dropout.
pub fn add_noise(depth: &DepthImage, params: &NoiseParams) -> Result<DepthImage, SceneError> {
    params.validate()?;
    let (w, h) = (depth.width(), depth.height());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = if params.sigma_mm > 0.0 {
        Some(Normal::new(0.0, params.sigma_mm).expect("validated sigma"))
    } else {
        None
    };
    let mut out = vec![0.0f32; w * h];
    for v in 0..h {
        for u in 0..w {
            let center = depth.at(u, v);
            if center == 0.0 {
                continue;
            }
            let mut z = center as f64;
            if params.edge_jitter > 0.0 {
                // Neighbors across a large depth step, fixed order.
                let mut jumps: [f32; 4] = [0.0; 4];
                let mut n_jumps = 0;
                let mut consider = |du: isize, dv: isize| {
                    let (nu, nv) = (u as isize + du, v as isize + dv);
                    if nu < 0 || nv < 0 || nu >= w as isize || nv >= h as isize {
                        return;
                    }
                    let d = depth.at(nu as usize, nv as usize);
                    if d > 0.0 && (d - center).abs() > params.edge_threshold_mm as f32 {
                        jumps[n_jumps] = d;
                        n_jumps += 1;
                    }
                };
                consider(-1, 0);
                consider(1, 0);
                consider(0, -1);
                consider(0, 1);
                if n_jumps > 0 && rng.gen::<f64>() < params.edge_jitter {
                    z = jumps[rng.gen_range(0..n_jumps)] as f64;
                }
            }
            if let Some(n) = &normal {
                z += n.sample(&mut rng);
            }
            if z <= 0.0 {
                continue;
            }
            if params.quantize_mm > 0.0 {
                z = (z / params.quantize_mm).round() * params.quantize_mm;
            }
            if params.dropout > 0.0 && rng.gen::<f64>() < params.dropout {
                continue;
            }
            out[v * w + u] = z.clamp(0.0, 65535.0) as f32;
        }
    }
    Ok(DepthImage::new(w, h, out)?)
}

// ---------------------------------------------------------------------------
// Camera paths.

/// Camera pose with +z through `target`, +x level, +y toward the ground
/// (image-down). Fails when eye and target coincide.
pub fn look_at_pose(eye: &Point3<f64>, target: &Point3<f64>) -> Result<Pose, SceneError> {
    let gaze = target - eye;
    if gaze.norm() < 1e-12 {
        return Err(SceneError::BadParams("eye equals target".into()));
    }
    let z = gaze.normalize();
    let mut x = z.cross(&Vector3::z());
    if x.norm() < 1e-9 {
        x = Vector3::x(); // straight up or down; keep world x as image x
    } else {
        x = x.normalize();
    }
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(Pose::new(
        UnitQuaternion::from_rotation_matrix(&rot),
        eye.coords,
    ))
}

/// Straight camera dolly with a drifting odometry report: true poses
/// interpolate eye positions looking at a fixed target, reported poses gain
/// `drift_per_frame` meters of height per frame, cumulatively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPath {
    pub frames: usize,
    pub eye_start: [f64; 3],
    pub eye_end: [f64; 3],
    pub target: [f64; 3],
    #[serde(default)]
    pub drift_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFrame {
    /// Pose the scene is rendered from.
    pub true_pose: Pose,
    /// Pose odometry would report (true pose plus accumulated drift).
    pub reported_pose: Pose,
}

impl CameraPath {
    pub fn poses(&self) -> Result<Vec<PathFrame>, SceneError> {
        if self.frames == 0 {
            return Err(SceneError::BadParams("path needs at least one frame".into()));
        }
        if !self.drift_per_frame.is_finite() {
            return Err(SceneError::BadParams("non-finite drift".into()));
        }
        let a = Vector3::from(self.eye_start);
        let b = Vector3::from(self.eye_end);
        let target = Point3::from(Vector3::from(self.target));
        (0..self.frames)
            .map(|i| {
                let t = if self.frames == 1 {
                    0.0
                } else {
                    i as f64 / (self.frames - 1) as f64
                };
                let eye = Point3::from(a + t * (b - a));
                let true_pose = look_at_pose(&eye, &target)?;
                let mut reported = true_pose.clone();
                reported.translation.z += self.drift_per_frame * i as f64;
                Ok(PathFrame {
                    true_pose,
                    reported_pose: reported,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Scene description files (TOML).

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseSpec {
    pub steps: usize,
    /// Step height, meters.
    pub rise: f64,
    /// Step depth, meters.
    pub run: f64,
    /// Step width, meters.
    pub width: f64,
    #[serde(default)]
    pub origin: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    /// Non-zero turns the flight into a spiral, this much per step.
    #[serde(default)]
    pub turn_deg_per_step: f64,
    /// Spiral column radius; only used when turning.
    #[serde(default = "default_inner_radius")]
    pub inner_radius: f64,
}

fn default_inner_radius() -> f64 {
    0.3
}

impl StaircaseSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.steps == 0 {
            return Err(SceneError::BadParams("staircase needs steps".into()));
        }
        for (name, v) in [("rise", self.rise), ("run", self.run), ("width", self.width)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SceneError::BadParams(format!("staircase {name} {v}")));
            }
        }
        if !(self.turn_deg_per_step.is_finite() && self.inner_radius.is_finite()) {
            return Err(SceneError::BadParams("non-finite spiral parameters".into()));
        }
        Ok(())
    }

    /// One box per step, each rising from the base plane so the boxes fill
    /// the space under the flight.
    pub fn boxes(&self) -> Result<Vec<OrientedBox>, SceneError> {
        self.validate()?;
        let yaw0 = self.yaw_deg.to_radians();
        let turn = self.turn_deg_per_step.to_radians();
        let origin = Vector3::from(self.origin);
        let mut out = Vec::with_capacity(self.steps);
        for i in 0..self.steps {
            let height = (i + 1) as f64 * self.rise;
            let (center, yaw) = if turn == 0.0 {
                let local = Vector3::new(0.0, (i as f64 + 0.5) * self.run, height / 2.0);
                (origin + rotate_z(yaw0, &local), yaw0)
            } else {
                let a = yaw0 + i as f64 * turn;
                let r = self.inner_radius + self.run / 2.0;
                (
                    origin + Vector3::new(-r * a.sin(), r * a.cos(), height / 2.0),
                    a,
                )
            };
            out.push(OrientedBox {
                center,
                half_extents: Vector3::new(self.width / 2.0, self.run / 2.0, height / 2.0),
                yaw,
            });
        }
        Ok(out)
    }
}

fn rotate_z(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (c, s) = (yaw.cos(), yaw.sin());
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    /// Extent in x and y, meters, centered on the origin with its top at
    /// z = 0.
    pub size: [f64; 2],
    #[serde(default = "default_ground_thickness")]
    pub thickness: f64,
}

fn default_ground_thickness() -> f64 {
    0.1
}

impl GroundSpec {
    fn to_box(&self) -> Result<OrientedBox, SceneError> {
        let b = OrientedBox {
            center: Vector3::new(0.0, 0.0, -self.thickness / 2.0),
            half_extents: Vector3::new(self.size[0] / 2.0, self.size[1] / 2.0, self.thickness / 2.0),
            yaw: 0.0,
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

impl BoxSpec {
    fn to_box(&self) -> Result<OrientedBox, SceneError> {
        let b = OrientedBox {
            center: Vector3::from(self.center),
            half_extents: Vector3::from(self.half_extents),
            yaw: self.yaw_deg.to_radians(),
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SceneError> {
        let cx = self.cx.unwrap_or((self.width as f64 - 1.0) / 2.0);
        let cy = self.cy.unwrap_or((self.height as f64 - 1.0) / 2.0);
        Ok(CameraIntrinsics::new(
            self.fx,
            self.fy,
            cx,
            cy,
            self.width,
            self.height,
        )?)
    }
}

/// Whole-scene description as stored in a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub staircase: Vec<StaircaseSpec>,
    #[serde(default, rename = "box", skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<CameraPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
}

impl SceneConfig {
    pub fn build_scene(&self) -> Result<Scene, SceneError> {
        let mut boxes = Vec::new();
        if let Some(g) = &self.ground {
            boxes.push(g.to_box()?);
        }
        for s in &self.staircase {
            boxes.extend(s.boxes()?);
        }
        for b in &self.boxes {
            boxes.push(b.to_box()?);
        }
        let scene = Scene { boxes };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn parse_scene_config(text: &str) -> Result<SceneConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn load_scene_config(path: &std::path::Path) -> Result<SceneConfig, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_scene_config(&text).map_err(|reason| SceneError::Config {
        path: path.display().to_string(),
        reason,
    })
}

pub fn save_scene_config(cfg: &SceneConfig, path: &std::path::Path) -> Result<(), SceneError> {
    let text = toml::to_string_pretty(cfg).map_err(|e| SceneError::Config {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| SceneError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Ground-truth files (JSON, schema 1).

#[derive(Serialize, Deserialize)]
struct GtJson {
    schema: u32,
    faces: Vec<GtFaceJson>,
}

#[derive(Serialize, Deserialize)]
struct GtFaceJson {
    #[serde(flatten)]
    id: FaceId,
    normal: [f64; 3],
    d: f64,
    polygons: Vec<GtPolygonJson>,
}

#[derive(Serialize, Deserialize)]
struct GtPolygonJson {
    vertices: Vec<[f64; 3]>,
    #[serde(default)]
    holes: Vec<Vec<[f64; 3]>>,
    centroid: [f64; 3],
    area: f64,
}

pub fn gt_to_json(gt: &GroundTruth) -> String {
    let pt = |p: &Point3<f64>| [p.x, p.y, p.z];
    let doc = GtJson {
        schema: 1,
        faces: gt
            .faces
            .iter()
            .map(|f| GtFaceJson {
                id: f.id,
                normal: [f.plane.normal.x, f.plane.normal.y, f.plane.normal.z],
                d: f.plane.d,
                polygons: f
                    .polygons
                    .iter()
                    .map(|p| GtPolygonJson {
                        vertices: p.vertices.iter().map(|v| pt(v)).collect(),
                        holes: p
                            .holes
                            .iter()
                            .map(|h| h.iter().map(|v| pt(v)).collect())
                            .collect(),
                        centroid: pt(&p.centroid),
                        area: p.area,
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("ground truth serialization");
    s.push('\n');
    s
}

pub fn gt_from_json(text: &str) -> Result<GroundTruth, String> {
    let doc: GtJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.schema != 1 {
        return Err(format!("unsupported schema {}", doc.schema));
    }
    let ring = |r: &[[f64; 3]]| -> Vec<Point3<f64>> {
        r.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect()
    };
    let faces = doc
        .faces
        .iter()
        .map(|f| {
            let normal = Vector3::new(f.normal[0], f.normal[1], f.normal[2]);
            if (normal.norm() - 1.0).abs() > 1e-6 {
                return Err("face normal is not unit".to_string());
            }
            let plane = Plane {
                normal: normal.normalize(),
                d: f.d,
            };
            let polygons = f
                .polygons
                .iter()
                .map(|p| {
                    if p.vertices.len() < 3 {
                        return Err("polygon with fewer than 3 vertices".to_string());
                    }
                    Ok(PlanarPolygon {
                        vertices: ring(&p.vertices),
                        holes: p.holes.iter().map(|h| ring(h)).collect(),
                        plane,
                        centroid: Point3::new(p.centroid[0], p.centroid[1], p.centroid[2]),
                        area: p.area,
                        frame: Frame::World,
                        inlier_fraction: 1.0,
                        fit_error: 0.0,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(GtFace {
                id: f.id,
                plane,
                polygons,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(GroundTruth { faces })
}

pub fn save_ground_truth(gt: &GroundTruth, path: &std::path::Path) -> Result<(), SceneError> {
    std::fs::write(path, gt_to_json(gt)).map_err(|e| SceneError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_ground_truth(path: &std::path::Path) -> Result<GroundTruth, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    gt_from_json(&text).map_err(|reason| SceneError::Config {
        path: path.display().to_string(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap()
    }

    fn ground_scene() -> Scene {
        Scene {
            boxes: vec![OrientedBox {
                center: Vector3::new(0.0, 0.0, -0.05),
                half_extents: Vector3::new(5.0, 5.0, 0.05),
                yaw: 0.0,
            }],
        }
    }

    fn downward_pose(height: f64) -> Pose {
        look_at_pose(&Point3::new(0.0, 0.0, height), &Point3::origin()).unwrap()
    }

    #[test]
    fn straight_down_ground_renders_constant_depth() {
        let intr = small_intrinsics();
        let (depth, faces) =
            render_depth(&ground_scene(), &intr, &downward_pose(2.0), &RenderParams::default())
                .unwrap();
        // z-depth, not ray length: every pixel sees exactly 2 m.
        for v in 0..intr.height {
            for u in 0..intr.width {
                assert_eq!(depth.at(u, v), 2000.0, "pixel {u},{v}");
                assert_eq!(
                    faces.face_at(u, v),
                    Some(FaceId {
                        box_index: 0,
                        face: BoxFace::ZPos
                    })
                );
            }
        }
    }

    #[test]
    fn ground_truth_is_the_frustum_footprint() {
        let intr = small_intrinsics();
        let gt = ground_truth(&ground_scene(), &intr, &downward_pose(2.0)).unwrap();
        assert_eq!(gt.faces.len(), 1);
        let face = &gt.faces[0];
        assert!((face.plane.normal - Vector3::z()).norm() < 1e-12);
        assert!(face.plane.d.abs() < 1e-12);
        // Frustum through the outer pixel centers at 2 m:
        // x in [-0.64, 0.62], y in [-0.46, 0.48].
        let expect = (0.62f64 + 0.64) * (0.48 + 0.46);
        assert!((face.area() - expect).abs() < 1e-9, "area {}", face.area());
    }

    #[test]
    fn box_shadow_subtracts_exactly() {
        let mut scene = ground_scene();
        scene.boxes.push(OrientedBox {
            center: Vector3::new(0.0, 0.0, 0.1),
            half_extents: Vector3::new(0.25, 0.25, 0.1),
            yaw: 0.0,
        });
        let intr = small_intrinsics();
        let gt = ground_truth(&scene, &intr, &downward_pose(2.0)).unwrap();
        // Ground and box top; the four sides are edge-on to the camera.
        assert_eq!(gt.faces.len(), 2);
        let ground = gt
            .find(FaceId {
                box_index: 0,
                face: BoxFace::ZPos,
            })
            .unwrap();
        let top = gt
            .find(FaceId {
                box_index: 1,
                face: BoxFace::ZPos,
            })
            .unwrap();
        assert!((top.area() - 0.25).abs() < 1e-12);
        // Top corners at z = 0.2 project from 2 m with scale 2 / 1.8.
        let half = 0.25 * 2.0 / 1.8;
        let frustum = (0.62f64 + 0.64) * (0.48 + 0.46);
        let expect = frustum - (2.0 * half) * (2.0 * half);
        assert!(
            (ground.area() - expect).abs() < 1e-7,
            "ground {} expect {expect}",
            ground.area()
        );
        // Hidden probe point under the shadow, visible probe outside it.
        assert!(!ground.contains(&Point3::new(0.0, 0.0, 0.0), 1e-9));
        assert!(ground.contains(&Point3::new(0.5, 0.3, 0.0), 1e-9));
    }

    #[test]
    fn straddling_occluder_is_clipped_at_the_plane() {
        let mut scene = ground_scene();
        // Box half sunk into the ground: only the upper part shades it.
        scene.boxes.push(OrientedBox {
            center: Vector3::new(0.0, 0.0, 0.0),
            half_extents: Vector3::new(0.25, 0.25, 0.1),
            yaw: 0.0,
        });
        let intr = small_intrinsics();
        let gt = ground_truth(&scene, &intr, &downward_pose(2.0)).unwrap();
        let ground = gt
            .find(FaceId {
                box_index: 0,
                face: BoxFace::ZPos,
            })
            .unwrap();
        let half = 0.25 * 2.0 / 1.9; // top corners at z = 0.1
        let frustum = (0.62f64 + 0.64) * (0.48 + 0.46);
        let expect = frustum - (2.0 * half) * (2.0 * half);
        assert!(
            (ground.area() - expect).abs() < 1e-7,
            "ground {} expect {expect}",
            ground.area()
        );
    }

    fn staircase_scene() -> (Scene, SceneConfig) {
        let cfg = SceneConfig {
            ground: Some(GroundSpec {
                size: [10.0, 10.0],
                thickness: 0.1,
            }),
            staircase: vec![StaircaseSpec {
                steps: 4,
                rise: 0.15,
                run: 0.28,
                width: 1.0,
                origin: [0.0, 0.8, 0.0],
                yaw_deg: 0.0,
                turn_deg_per_step: 0.0,
                inner_radius: 0.3,
            }],
            ..Default::default()
        };
        (cfg.build_scene().unwrap(), cfg)
    }

    #[test]
    fn staircase_boxes_fill_under_each_step() {
        let (scene, _) = staircase_scene();
        assert_eq!(scene.boxes.len(), 5);
        let step2 = &scene.boxes[2]; // second step
        assert!((step2.center.y - (0.8 + 1.5 * 0.28)).abs() < 1e-12);
        assert!((step2.center.z - 0.15).abs() < 1e-12);
        assert!((step2.half_extents.z - 0.15).abs() < 1e-12);
    }

    #[test]
    fn staircase_gt_has_exact_tread_and_riser_faces() {
        let (scene, _) = staircase_scene();
        let intr = CameraIntrinsics::new(120.0, 120.0, 47.5, 35.5, 96, 72).unwrap();
        let pose = look_at_pose(&Point3::new(0.0, -0.6, 1.5), &Point3::new(0.0, 1.2, 0.2)).unwrap();
        let gt = ground_truth(&scene, &intr, &pose).unwrap();

        // Every tread: full rectangle width x run (frustum is wider here).
        for i in 0..4 {
            let tread = gt
                .find(FaceId {
                    box_index: 1 + i,
                    face: BoxFace::ZPos,
                })
                .unwrap_or_else(|| panic!("tread {i} missing"));
            assert!(
                (tread.area() - 0.28).abs() < 1e-7,
                "tread {i} area {}",
                tread.area()
            );
        }
        // Every riser: the part of the front face above the previous step.
        for i in 0..4 {
            let riser = gt
                .find(FaceId {
                    box_index: 1 + i,
                    face: BoxFace::YNeg,
                })
                .unwrap_or_else(|| panic!("riser {i} missing"));
            assert!(
                (riser.area() - 0.15).abs() < 1e-7,
                "riser {i} area {}",
                riser.area()
            );
            // Outward normal faces the camera.
            assert!((riser.plane.normal - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        }
    }

    fn check_render_matches_gt(
        scene: &Scene,
        intr: &CameraIntrinsics,
        pose: &Pose,
    ) -> Result<(), String> {
        let (depth, faces) = render_depth(scene, intr, pose, &RenderParams::default())
            .map_err(|e| e.to_string())?;
        let gt = ground_truth(scene, intr, pose).map_err(|e| e.to_string())?;
        for v in 0..intr.height {
            for u in 0..intr.width {
                let d = depth.at(u, v);
                if d == 0.0 {
                    continue;
                }
                let id = faces.face_at(u, v).unwrap();
                let face = gt
                    .find(id)
                    .ok_or_else(|| format!("face {id:?} rendered but absent from truth"))?;
                let p_cam = intr.deproject_pixel(u, v, d).map_err(|e| e.to_string())?;
                let p = pose.transform_point(&p_cam);
                let dist = face.plane.signed_distance(&p).abs();
                // f32 depth quantization puts points slightly off-plane.
                if dist > 5e-4 {
                    return Err(format!("pixel {u},{v}: {dist} off plane {id:?}"));
                }
                if (u + v) % 7 == 0 && !face.contains(&p, 1e-3) {
                    return Err(format!("pixel {u},{v} outside the visible region of {id:?}"));
                }
            }
        }
        Ok(())
    }

    #[test]
    fn renderer_and_ground_truth_agree_on_the_staircase() {
        let (scene, _) = staircase_scene();
        let intr = CameraIntrinsics::new(120.0, 120.0, 47.5, 35.5, 96, 72).unwrap();
        // Slightly off axis so shadows slant.
        let pose = look_at_pose(&Point3::new(0.3, -0.5, 1.6), &Point3::new(0.0, 1.2, 0.2)).unwrap();
        check_render_matches_gt(&scene, &intr, &pose).unwrap();
    }

    #[test]
    fn empty_view_is_an_error() {
        let intr = small_intrinsics();
        let pose = look_at_pose(&Point3::new(0.0, 0.0, 1.0), &Point3::new(0.0, 0.0, 5.0)).unwrap();
        match render_depth(&ground_scene(), &intr, &pose, &RenderParams::default()) {
            Err(SceneError::EmptyView) => {}
            other => panic!("expected EmptyView, got {other:?}"),
        }
    }

    #[test]
    fn level_gaze_clips_ground_by_the_view_cone() {
        let intr = small_intrinsics();
        // Nearly level gaze: upper frustum rays point above the horizon, so
        // the visible ground is bounded by the cone sides, not a quad.
        let pose = look_at_pose(&Point3::new(0.0, -3.0, 0.3), &Point3::new(0.0, 3.0, 0.25)).unwrap();
        let gt = ground_truth(&ground_scene(), &intr, &pose).unwrap();
        assert_eq!(gt.faces.len(), 1);
        let area = gt.faces[0].area();
        assert!(area > 1.0 && area < 100.0, "area {area}");
        check_render_matches_gt(&ground_scene(), &intr, &pose).unwrap();
    }

    #[test]
    fn noise_is_deterministic_and_shaped() {
        let intr = small_intrinsics();
        let (depth, _) =
            render_depth(&ground_scene(), &intr, &downward_pose(2.0), &RenderParams::default())
                .unwrap();
        let params = NoiseParams {
            sigma_mm: 3.0,
            dropout: 0.05,
            quantize_mm: 0.0,
            edge_jitter: 0.0,
            ..Default::default()
        };
        let a = add_noise(&depth, &params).unwrap();
        let b = add_noise(&depth, &params).unwrap();
        assert_eq!(a.data(), b.data());
        let c = add_noise(&depth, &NoiseParams { seed: 1, ..params }).unwrap();
        assert_ne!(a.data(), c.data());

        let valid: Vec<f64> = a.data().iter().filter(|&&d| d > 0.0).map(|&d| d as f64).collect();
        let n = valid.len() as f64;
        let dropped = 1.0f64 - n / (64.0 * 48.0);
        assert!((dropped - 0.05).abs() < 0.02, "dropout {dropped}");
        let mean = valid.iter().sum::<f64>() / n;
        let std = (valid.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
        assert!((mean - 2000.0).abs() < 0.5, "mean {mean}");
        assert!((std - 3.0).abs() < 0.5, "std {std}");
    }

    #[test]
    fn quantization_snaps_to_grid() {
        let intr = small_intrinsics();
        let (depth, _) =
            render_depth(&ground_scene(), &intr, &downward_pose(2.3456), &RenderParams::default())
                .unwrap();
        let params = NoiseParams {
            sigma_mm: 1.0,
            dropout: 0.0,
            quantize_mm: 2.0,
            edge_jitter: 0.0,
            ..Default::default()
        };
        let out = add_noise(&depth, &params).unwrap();
        for &d in out.data() {
            if d > 0.0 {
                assert_eq!(d % 2.0, 0.0, "depth {d} off grid");
            }
        }
    }

    #[test]
    fn edge_jitter_only_touches_discontinuities() {
        // Two flat levels 100 mm apart; only pixels along the seam may move.
        let (w, h) = (16usize, 8usize);
        let mut data = vec![1000.0f32; w * h];
        for v in 0..h {
            for u in 8..w {
                data[v * w + u] = 1100.0;
            }
        }
        let depth = DepthImage::new(w, h, data).unwrap();
        let params = NoiseParams {
            sigma_mm: 0.0,
            dropout: 0.0,
            quantize_mm: 0.0,
            edge_jitter: 1.0,
            edge_threshold_mm: 20.0,
            seed: 7,
        };
        let out = add_noise(&depth, &params).unwrap();
        let mut moved = 0;
        for v in 0..h {
            for u in 0..w {
                let (a, b) = (depth.at(u, v), out.at(u, v));
                if u == 7 || u == 8 {
                    if a != b {
                        moved += 1;
                        assert_eq!(b, if u == 7 { 1100.0 } else { 1000.0 });
                    }
                } else {
                    assert_eq!(a, b, "non-edge pixel {u},{v} changed");
                }
            }
        }
        assert_eq!(moved, 2 * h, "jitter probability 1 must move every seam pixel");
    }

    #[test]
    fn look_at_conventions() {
        let p = downward_pose(2.0);
        // Straight down: camera z maps to world -z, y to world -y.
        assert!((p.transform_vector(&Vector3::z()) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((p.transform_vector(&Vector3::y()) - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);

        // Forward pitched-down gaze: image-down points toward the ground.
        let p = look_at_pose(&Point3::new(0.0, -1.0, 1.0), &Point3::new(0.0, 1.0, 0.0)).unwrap();
        let y_world = p.transform_vector(&Vector3::y());
        assert!(y_world.z < -0.5);
        let x_world = p.transform_vector(&Vector3::x());
        assert!((x_world - Vector3::x()).norm() < 1e-12);

        assert!(look_at_pose(&Point3::origin(), &Point3::origin()).is_err());
    }

    #[test]
    fn camera_path_applies_cumulative_drift() {
        let path = CameraPath {
            frames: 5,
            eye_start: [0.0, -2.0, 1.0],
            eye_end: [0.0, -1.0, 1.0],
            target: [0.0, 1.0, 0.0],
            drift_per_frame: 0.002,
        };
        let frames = path.poses().unwrap();
        assert_eq!(frames.len(), 5);
        for (i, f) in frames.iter().enumerate() {
            let dz = f.reported_pose.translation.z - f.true_pose.translation.z;
            assert!((dz - 0.002 * i as f64).abs() < 1e-15);
            assert_eq!(f.true_pose.rotation, f.reported_pose.rotation);
        }
        assert!((frames[4].true_pose.translation.y - -1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_toml_roundtrip_and_unknown_keys() {
        let (_, cfg) = staircase_scene();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back = parse_scene_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.build_scene().unwrap().boxes.len(), 5);

        assert!(parse_scene_config("[ground]\nsize = [1.0, 1.0]\nbogus = 3\n").is_err());
        assert!(parse_scene_config("[[staircase]]\nsteps = 0\nrise = 0.1\nrun = 0.2\nwidth = 1.0\n")
            .unwrap()
            .build_scene()
            .is_err());
    }

    #[test]
    fn spiral_staircase_turns_each_step() {
        let spec = StaircaseSpec {
            steps: 6,
            rise: 0.15,
            run: 0.3,
            width: 0.8,
            origin: [0.0, 0.0, 0.0],
            yaw_deg: 0.0,
            turn_deg_per_step: 20.0,
            inner_radius: 0.4,
        };
        let boxes = spec.boxes().unwrap();
        assert_eq!(boxes.len(), 6);
        for (i, b) in boxes.iter().enumerate() {
            assert!((b.yaw - (i as f64 * 20.0).to_radians()).abs() < 1e-12);
            let r = (b.center.x * b.center.x + b.center.y * b.center.y).sqrt();
            assert!((r - 0.55).abs() < 1e-12);
        }
        // Heights climb like the straight flight.
        assert!((boxes[5].center.z - 0.45).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_json_roundtrip() {
        let (scene, _) = staircase_scene();
        let intr = CameraIntrinsics::new(120.0, 120.0, 47.5, 35.5, 96, 72).unwrap();
        let pose = look_at_pose(&Point3::new(0.0, -0.6, 1.5), &Point3::new(0.0, 1.2, 0.2)).unwrap();
        let gt = ground_truth(&scene, &intr, &pose).unwrap();
        let json = gt_to_json(&gt);
        let back = gt_from_json(&json).unwrap();
        assert_eq!(back.faces.len(), gt.faces.len());
        assert!((back.total_area() - gt.total_area()).abs() < 1e-12);
        assert_eq!(gt_to_json(&back), json);
        assert!(gt_from_json("{\"schema\": 9, \"faces\": []}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        // Random boxed scenes seen from random raised cameras: every
        // rendered pixel deprojects onto the ground-truth region of the
        // face it claims to see.
        #[test]
        fn render_agrees_with_truth(seed in 0u64..u64::MAX) {
            use rand::{Rng, SeedableRng};
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scene = Scene {
                boxes: vec![OrientedBox {
                    center: Vector3::new(0.0, 0.0, -0.05),
                    half_extents: Vector3::new(6.0, 6.0, 0.05),
                    yaw: 0.0,
                }],
            };
            let n_boxes = rng.gen_range(1..=3);
            let mut top = 0.0f64;
            for _ in 0..n_boxes {
                let h = rng.gen_range(0.05..0.4);
                scene.boxes.push(OrientedBox {
                    center: Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        h / 2.0,
                    ),
                    half_extents: Vector3::new(
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                        h / 2.0,
                    ),
                    yaw: rng.gen_range(-1.0..1.0),
                });
                top = top.max(h);
            }
            let eye = Point3::new(
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-2.0..-1.2),
                top + rng.gen_range(1.2..2.0),
            );
            let target = Point3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), 0.0);
            let intr = CameraIntrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap();
            let pose = look_at_pose(&eye, &target).unwrap();
            if let Err(e) = check_render_matches_gt(&scene, &intr, &pose) {
                prop_assert!(false, "{e}");
            }
        }
    }
}
