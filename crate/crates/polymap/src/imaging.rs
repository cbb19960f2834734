//! Depth rasters, the pinhole camera model, rigid poses, and frame I/O.
//!
//! On-disk formats: 16-bit binary PGM (`P5`, maxval 65535) or 16-bit
//! grayscale PNG for depth, a `key = value` text file for intrinsics, and
//! JSONL for pose sequences. Pixel values are millimeters; zero is invalid.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions {0}x{1} below minimum 3x3")]
    BadDimensions(usize, usize),
    #[error("buffer holds {got} values, expected {width}x{height}={expected}")]
    BadBufferLength {
        got: usize,
        width: usize,
        height: usize,
        expected: usize,
    },
    #[error("depth {0} is not a finite non-negative millimeter value")]
    BadDepthValue(f32),
    #[error("depth at ({0}, {1}) is invalid")]
    InvalidDepth(usize, usize),
    #[error("pixel ({0}, {1}) outside image")]
    OutOfBounds(usize, usize),
    #[error("intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("quaternion norm {0} too far from 1")]
    NonUnitQuaternion(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

impl ImagingError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ImagingError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl Into<String>) -> Self {
        ImagingError::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// Single-channel depth raster in millimeters; `0.0` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    /// Wraps a row-major millimeter buffer. Dimensions must be at least 3x3
    /// and every value finite and non-negative.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImagingError> {
        if width < 3 || height < 3 {
            return Err(ImagingError::BadDimensions(width, height));
        }
        if data.len() != width * height {
            return Err(ImagingError::BadBufferLength {
                got: data.len(),
                width,
                height,
                expected: width * height,
            });
        }
        if let Some(&bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ImagingError::BadDepthValue(bad));
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    /// All-invalid image of the given size.
    pub fn empty(width: usize, height: usize) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.data[self.idx(u, v)]
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.at(u, v) > 0.0
    }

    /// Fraction of pixels carrying a valid depth.
    pub fn valid_fraction(&self) -> f64 {
        let n = self.data.iter().filter(|v| **v > 0.0).count();
        n as f64 / self.data.len() as f64
    }
}

/// Pinhole camera: focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, ImagingError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(ImagingError::BadIntrinsics(format!(
                "focal lengths ({}, {}) must be positive",
                self.fx, self.fy
            )));
        }
        if self.width < 3 || self.height < 3 {
            return Err(ImagingError::BadIntrinsics(format!(
                "sensor {}x{} below minimum 3x3",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if !(self.cx.is_finite() && self.cy.is_finite())
            || self.cx <= 0.0
            || self.cx >= w
            || self.cy <= 0.0
            || self.cy >= h
        {
            return Err(ImagingError::BadIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} sensor",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Unnormalized view ray through pixel coordinate `(u, v)`: the point at
    /// camera depth `z` along it is `ray * z`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Back-projects pixel `(u, v)` with depth in millimeters to a
    /// camera-frame point in meters.
    pub fn deproject_pixel(
        &self,
        u: usize,
        v: usize,
        depth_mm: f32,
    ) -> Result<Point3<f64>, ImagingError> {
        if u >= self.width || v >= self.height {
            return Err(ImagingError::OutOfBounds(u, v));
        }
        if !(depth_mm.is_finite() && depth_mm > 0.0) {
            return Err(ImagingError::InvalidDepth(u, v));
        }
        let z = depth_mm as f64 / 1000.0;
        Ok(Point3::from(self.ray(u as f64, v as f64) * z))
    }

    /// Forward projection of a camera-frame point (meters, `z > 0`) to pixel
    /// coordinates.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Intrinsics for the same field of view at a different resolution.
    pub fn scaled_to(&self, width: usize, height: usize) -> Result<Self, ImagingError> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
        )
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// Builds a pose from raw quaternion components, rejecting quaternions
    /// whose norm strays from 1 by more than 1e-6.
    pub fn from_parts_checked(
        qx: f64,
        qy: f64,
        qz: f64,
        qw: f64,
        translation: Vector3<f64>,
    ) -> Result<Self, ImagingError> {
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(ImagingError::NonUnitQuaternion(norm));
        }
        Ok(Pose {
            rotation: UnitQuaternion::from_quaternion(q),
            translation,
        })
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rot = self.rotation.inverse();
        Pose {
            rotation: rot,
            translation: -(rot * self.translation),
        }
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// One line of a pose JSONL file. `t` is the frame timestamp (the frame
/// index for synthetic sequences); the quaternion is x, y, z, w.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

impl PoseRecord {
    pub fn from_pose(t: f64, pose: &Pose) -> Self {
        let q = pose.rotation.quaternion();
        PoseRecord {
            t,
            tx: pose.translation.x,
            ty: pose.translation.y,
            tz: pose.translation.z,
            qx: q.i,
            qy: q.j,
            qz: q.k,
            qw: q.w,
        }
    }

    pub fn pose(&self) -> Result<Pose, ImagingError> {
        Pose::from_parts_checked(
            self.qx,
            self.qy,
            self.qz,
            self.qw,
            Vector3::new(self.tx, self.ty, self.tz),
        )
    }
}

const PGM_MAXVAL: u32 = 65535;

/// Writes 16-bit binary PGM (`P5`), big-endian samples, maxval 65535.
pub fn save_pgm(img: &DepthImage, path: &Path) -> Result<(), ImagingError> {
    let file = fs::File::create(path).map_err(|e| ImagingError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n{}\n", img.width(), img.height(), PGM_MAXVAL);
    w.write_all(header.as_bytes())
        .map_err(|e| ImagingError::io(path, e))?;
    let mut bytes = Vec::with_capacity(img.data().len() * 2);
    for &mm in img.data() {
        let q = quantize_mm(mm, path)?;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    w.write_all(&bytes).map_err(|e| ImagingError::io(path, e))?;
    w.flush().map_err(|e| ImagingError::io(path, e))
}

fn quantize_mm(mm: f32, path: &Path) -> Result<u16, ImagingError> {
    let q = mm.round();
    if q < 0.0 || q > PGM_MAXVAL as f32 {
        return Err(ImagingError::format(
            path,
            format!("depth {mm} mm outside the 16-bit range"),
        ));
    }
    Ok(q as u16)
}

pub fn load_pgm(path: &Path) -> Result<DepthImage, ImagingError> {
    let bytes = fs::read(path).map_err(|e| ImagingError::io(path, e))?;
    let mut pos = 0usize;

    // PNM allows whitespace runs and '#' comments between header tokens.
    let mut token = |bytes: &[u8]| -> Result<String, ImagingError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImagingError::format(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(ImagingError::format(path, "not a binary PGM (P5)"));
    }
    let parse = |s: String| -> Result<usize, ImagingError> {
        s.parse::<usize>()
            .map_err(|_| ImagingError::format(path, format!("bad header token {s:?}")))
    };
    let width = parse(token(&bytes)?)?;
    let height = parse(token(&bytes)?)?;
    let maxval = parse(token(&bytes)?)?;
    if maxval != PGM_MAXVAL as usize {
        return Err(ImagingError::format(
            path,
            format!("maxval {maxval}, expected {PGM_MAXVAL}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImagingError::format(path, "missing header terminator"));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| ImagingError::format(path, "image dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(ImagingError::format(
            path,
            format!("raster holds {} bytes, expected {}", raster.len(), need),
        ));
    }
    let data: Vec<f32> = raster[..need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
        .collect();
    DepthImage::new(width, height, data)
}

/// Writes 16-bit grayscale PNG with the same millimeter semantics as PGM.
pub fn save_png(img: &DepthImage, path: &Path) -> Result<(), ImagingError> {
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        img.width() as u32,
        img.height() as u32,
    );
    for (v, row) in img.data().chunks_exact(img.width()).enumerate() {
        for (u, &mm) in row.iter().enumerate() {
            buf.put_pixel(u as u32, v as u32, image::Luma([quantize_mm(mm, path)?]));
        }
    }
    image::DynamicImage::ImageLuma16(buf)
        .save(path)
        .map_err(|e| ImagingError::format(path, e.to_string()))
}

pub fn load_png(path: &Path) -> Result<DepthImage, ImagingError> {
    let dynimg = image::open(path).map_err(|e| ImagingError::format(path, e.to_string()))?;
    let buf = match dynimg {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(ImagingError::format(
                path,
                format!("expected 16-bit grayscale PNG, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data: Vec<f32> = buf.into_raw().into_iter().map(|v| v as f32).collect();
    DepthImage::new(w, h, data)
}

/// Loads a depth raster, picking the format from the file extension
/// (`.pgm` or `.png`).
pub fn load_depth(path: &Path) -> Result<DepthImage, ImagingError> {
    match extension(path) {
        Some(ext) if ext == "pgm" => load_pgm(path),
        Some(ext) if ext == "png" => load_png(path),
        _ => Err(ImagingError::format(path, "unsupported extension, use .pgm or .png")),
    }
}

/// Saves a depth raster, picking the format from the file extension.
pub fn save_depth(img: &DepthImage, path: &Path) -> Result<(), ImagingError> {
    match extension(path) {
        Some(ext) if ext == "pgm" => save_pgm(img, path),
        Some(ext) if ext == "png" => save_png(img, path),
        _ => Err(ImagingError::format(path, "unsupported extension, use .pgm or .png")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_lowercase())
}

const INTRINSICS_KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];

/// Parses an intrinsics text file: one `key = value` per line, `#` comments,
/// all six keys (`fx fy cx cy width height`) required exactly once.
pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, ImagingError> {
    let text = fs::read_to_string(path).map_err(|e| ImagingError::io(path, e))?;
    let mut values = [None::<f64>; 6];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ImagingError::format(path, format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let slot = INTRINSICS_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| ImagingError::format(path, format!("unknown key {key:?}")))?;
        if values[slot].is_some() {
            return Err(ImagingError::format(path, format!("duplicate key {key:?}")));
        }
        let parsed: f64 = value.trim().parse().map_err(|_| {
            ImagingError::format(path, format!("bad value for {key:?}: {:?}", value.trim()))
        })?;
        values[slot] = Some(parsed);
    }
    let get = |slot: usize| {
        values[slot].ok_or_else(|| {
            ImagingError::format(path, format!("missing key {:?}", INTRINSICS_KEYS[slot]))
        })
    };
    let (fx, fy, cx, cy) = (get(0)?, get(1)?, get(2)?, get(3)?);
    let (width, height) = (get(4)?, get(5)?);
    if width.fract() != 0.0 || height.fract() != 0.0 || width < 0.0 || height < 0.0 {
        return Err(ImagingError::format(path, "width/height must be non-negative integers"));
    }
    CameraIntrinsics::new(fx, fy, cx, cy, width as usize, height as usize)
}

pub fn save_intrinsics(k: &CameraIntrinsics, path: &Path) -> Result<(), ImagingError> {
    let mut text = String::new();
    let _ = writeln!(text, "fx = {}", k.fx);
    let _ = writeln!(text, "fy = {}", k.fy);
    let _ = writeln!(text, "cx = {}", k.cx);
    let _ = writeln!(text, "cy = {}", k.cy);
    let _ = writeln!(text, "width = {}", k.width);
    let _ = writeln!(text, "height = {}", k.height);
    fs::write(path, text).map_err(|e| ImagingError::io(path, e))
}

/// Reads a pose JSONL file into `(t, pose)` pairs, preserving line order.
pub fn load_poses(path: &Path) -> Result<Vec<(f64, Pose)>, ImagingError> {
    let file = fs::File::open(path).map_err(|e| ImagingError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ImagingError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| {
            ImagingError::format(path, format!("line {}: {}", lineno + 1, e))
        })?;
        out.push((rec.t, rec.pose()?));
    }
    Ok(out)
}

pub fn save_poses(records: &[PoseRecord], path: &Path) -> Result<(), ImagingError> {
    let mut text = String::new();
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| ImagingError::format(path, e.to_string()))?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| ImagingError::io(path, e))
}
