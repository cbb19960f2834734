//! Per-pixel surface normals from a depth raster.
//!
//! Two estimators share one output contract (unit normals, `n_z < 0`, camera
//! frame):
//!
//! * [`NormalMode::ImageGradient`] pushes the 3x3 Sobel response of the depth
//!   image through the inverse camera matrix,
//!   `n = normalize(-K^-1 (G_x, G_y, 1)^T)`. One convolution per pixel, the
//!   default and by far the cheaper mode.
//! * [`NormalMode::LocalPlane`] back-projects the 3x3 neighborhood and takes
//!   the smallest principal direction of the point scatter, a total
//!   least-squares plane per pixel.
//!
//! A pixel gets a valid normal only when its whole 3x3 depth window is valid.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{CameraIntrinsics, DepthImage};

#[derive(Debug, Error)]
pub enum NormalError {
    #[error("depth {0}x{1} does not match intrinsics {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalMode {
    ImageGradient,
    LocalPlane,
}

impl Default for NormalMode {
    fn default() -> Self {
        NormalMode::ImageGradient
    }
}

/// Dense normal raster; invalid pixels hold `[0, 0, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalImage {
    width: usize,
    height: usize,
    normals: Vec<[f32; 3]>,
    valid: Vec<bool>,
}

impl NormalImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn normals(&self) -> &[[f32; 3]] {
        &self.normals
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[self.idx(u, v)]
    }

    #[inline]
    pub fn normal(&self, u: usize, v: usize) -> Option<Vector3<f32>> {
        let i = self.idx(u, v);
        self.valid[i].then(|| Vector3::from(self.normals[i]))
    }

    /// Test/tool constructor; normals must already be unit with `n_z < 0`
    /// where valid.
    pub fn from_parts(
        width: usize,
        height: usize,
        normals: Vec<[f32; 3]>,
        valid: Vec<bool>,
    ) -> Self {
        assert_eq!(normals.len(), width * height);
        assert_eq!(valid.len(), width * height);
        NormalImage {
            width,
            height,
            normals,
            valid,
        }
    }
}

/// 3x3 Sobel with the conventional 1/8 normalization so responses are in
/// value units per pixel. Borders replicate the nearest sample. Output is
/// `[gx, gy]` per pixel.
pub fn sobel_gradients(data: &[f32], width: usize, height: usize) -> Vec<[f32; 2]> {
    assert_eq!(data.len(), width * height);
    let mut out = vec![[0.0f32; 2]; data.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for x in 0..width {
            row[x] = sobel_at(data, width, height, x, y);
        }
    });
    out
}

#[inline]
fn sobel_at(data: &[f32], width: usize, height: usize, x: usize, y: usize) -> [f32; 2] {
    let sample = |dx: isize, dy: isize| -> f32 {
        let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
        data[yy * width + xx]
    };
    let tl = sample(-1, -1);
    let tc = sample(0, -1);
    let tr = sample(1, -1);
    let ml = sample(-1, 0);
    let mr = sample(1, 0);
    let bl = sample(-1, 1);
    let bc = sample(0, 1);
    let br = sample(1, 1);
    let gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
    let gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
    [gx / 8.0, gy / 8.0]
}

/// Computes the normal raster for a depth image.
pub fn compute_normals(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    mode: NormalMode,
) -> Result<NormalImage, NormalError> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(NormalError::SizeMismatch(
            depth.width(),
            depth.height(),
            k.width,
            k.height,
        ));
    }
    let (w, h) = (depth.width(), depth.height());
    let data = depth.data();

    // Validity first: every pixel of the (clamped) 3x3 window must be valid.
    let mut valid = vec![false; w * h];
    valid.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            *slot = window_valid(data, w, h, x, y);
        }
    });

    let mut normals = vec![[0.0f32; 3]; w * h];
    match mode {
        NormalMode::ImageGradient => {
            let grads = sobel_gradients(data, w, h);
            normals
                .par_chunks_mut(w)
                .enumerate()
                .for_each(|(y, row)| {
                    for (x, slot) in row.iter_mut().enumerate() {
                        if !valid[y * w + x] {
                            continue;
                        }
                        let [gx, gy] = grads[y * w + x];
                        let v = Vector3::new(
                            (k.cx - gx as f64) / k.fx,
                            (k.cy - gy as f64) / k.fy,
                            -1.0,
                        );
                        *slot = to_unit_f32(v);
                    }
                });
        }
        NormalMode::LocalPlane => {
            normals
                .par_chunks_mut(w)
                .enumerate()
                .for_each(|(y, row)| {
                    for (x, slot) in row.iter_mut().enumerate() {
                        if !valid[y * w + x] {
                            continue;
                        }
                        *slot = to_unit_f32(local_plane_normal(data, w, k, x, y));
                    }
                });
        }
    }
    Ok(NormalImage {
        width: w,
        height: h,
        normals,
        valid,
    })
}

#[inline]
fn window_valid(data: &[f32], w: usize, h: usize, x: usize, y: usize) -> bool {
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            if data[yy * w + xx] <= 0.0 {
                return false;
            }
        }
    }
    true
}

fn local_plane_normal(data: &[f32], w: usize, k: &CameraIntrinsics, x: usize, y: usize) -> Vector3<f64> {
    let mut pts: [Point3<f64>; 9] = [Point3::origin(); 9];
    let mut i = 0;
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let xx = (x as isize + dx).clamp(0, k.width as isize - 1) as usize;
            let yy = (y as isize + dy).clamp(0, k.height as isize - 1) as usize;
            let z = data[yy * w + xx] as f64 / 1000.0;
            pts[i] = Point3::from(k.ray(xx as f64, yy as f64) * z);
            i += 1;
        }
    }
    let centroid = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / 9.0;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut min_i = 0;
    for j in 1..3 {
        if eig.eigenvalues[j] < eig.eigenvalues[min_i] {
            min_i = j;
        }
    }
    eig.eigenvectors.column(min_i).into_owned()
}

/// Normalizes and orients toward the camera (`n_z < 0`), with a fixed
/// lexicographic tie-break when `n_z` is exactly zero.
fn to_unit_f32(v: Vector3<f64>) -> [f32; 3] {
    let n = v.normalize();
    let flip = n.z > 0.0 || (n.z == 0.0 && (n.y > 0.0 || (n.y == 0.0 && n.x > 0.0)));
    let n = if flip { -n } else { n };
    [n.x as f32, n.y as f32, n.z as f32]
}

/// Dumps normals as an 8-bit RGB PNG with channels `(n + 1) / 2 * 255`;
/// invalid pixels are black.
pub fn write_normal_png(img: &NormalImage, path: &std::path::Path) -> Result<(), crate::imaging::ImagingError> {
    let mut buf = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for v in 0..img.height() {
        for u in 0..img.width() {
            let i = img.idx(u, v);
            let px = if img.valid[i] {
                let n = img.normals[i];
                let map = |c: f32| ((c + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8;
                image::Rgb([map(n[0]), map(n[1]), map(n[2])])
            } else {
                image::Rgb([0, 0, 0])
            };
            buf.put_pixel(u as u32, v as u32, px);
        }
    }
    buf.save(path)
        .map_err(|e| crate::imaging::ImagingError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
}
