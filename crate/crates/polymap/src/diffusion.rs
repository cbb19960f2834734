//! Edge-preserving depth smoothing by explicit anisotropic diffusion.
//!
//! Each iteration updates a pixel by `I += gamma * c(|grad I|) * lap I` with
//! the exponential conductance `c(g) = exp(-(g/k)^2)`, a central-difference
//! gradient, and a 4-neighbor Laplacian. Strong depth steps drive `c` to
//! zero, so plane interiors smooth out while their borders stay put.
//!
//! Invalid pixels (depth 0) are excluded: they are never updated and never
//! contribute to a neighbor's stencil. Image borders behave the same way by
//! dropping the out-of-bounds taps, which matches replicate padding for both
//! the gradient and the Laplacian.

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::DepthImage;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("diffusion parameters: {0}")]
    BadParams(String),
}

/// Explicit-scheme parameters. `gamma` is the step size (stability requires
/// `gamma <= 0.25` for the 4-neighbor stencil), `k` the conductance scale in
/// millimeters, `iterations` the number of smoothing passes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionParams {
    pub gamma: f64,
    pub k: f64,
    pub iterations: usize,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            gamma: 0.15,
            k: 30.0,
            iterations: 10,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0 && self.gamma <= 0.25) {
            return Err(DiffusionError::BadParams(format!(
                "gamma {} outside (0, 0.25]",
                self.gamma
            )));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(DiffusionError::BadParams(format!(
                "conductance scale k {} must be positive",
                self.k
            )));
        }
        Ok(())
    }
}

/// Exponential conductance `exp(-(g/k)^2)`; 1 on flat ground, vanishing on
/// strong edges.
#[inline]
pub fn diffusion_coefficient(grad_mag: f32, k: f32) -> f32 {
    let r = grad_mag / k;
    (-(r * r)).exp()
}

/// Runs `params.iterations` diffusion passes and returns the smoothed image.
pub fn diffuse(img: &DepthImage, params: &DiffusionParams) -> Result<DepthImage, DiffusionError> {
    params.validate()?;
    let mut current = img.clone();
    let mut scratch = vec![0.0f32; img.data().len()];
    for _ in 0..params.iterations {
        diffuse_step_into(&current, params.gamma as f32, params.k as f32, &mut scratch);
        current.data_mut().copy_from_slice(&scratch);
    }
    Ok(current)
}

fn diffuse_step_into(img: &DepthImage, gamma: f32, k: f32, out: &mut [f32]) {
    let (w, h) = (img.width(), img.height());
    let data = img.data();
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let center = data[y * w + x];
            if center <= 0.0 {
                row[x] = 0.0;
                continue;
            }
            // A neighbor tap is live only when in bounds and valid.
            let tap = |xx: isize, yy: isize| -> Option<f32> {
                if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                    return None;
                }
                let v = data[yy as usize * w + xx as usize];
                (v > 0.0).then_some(v)
            };
            let (x, y) = (x as isize, y as isize);
            let l = tap(x - 1, y);
            let r = tap(x + 1, y);
            let u = tap(x, y - 1);
            let d = tap(x, y + 1);

            let gx = (r.unwrap_or(center) - l.unwrap_or(center)) * 0.5;
            let gy = (d.unwrap_or(center) - u.unwrap_or(center)) * 0.5;
            let grad = (gx * gx + gy * gy).sqrt();

            let lap = [l, r, u, d]
                .into_iter()
                .flatten()
                .map(|v| v - center)
                .sum::<f32>();

            row[x as usize] = center + gamma * diffusion_coefficient(grad, k) * lap;
        }
    });
}
