//! Edge-based segmentation of the normal image into polygonal regions.
//!
//! Plane borders show up as steps in the normal image, so the region
//! boundaries come from a Canny-style detector run on the normal channels:
//! per-channel Sobel, the strongest channel response per pixel, non-maximum
//! suppression along the gradient, and hysteresis thresholding. Raw normal
//! steps between adjacent planes are small numbers, so the strength field is
//! rescaled to an 8-bit range against the strongest response in the frame
//! before thresholding; the `canny_low`/`canny_high` thresholds are therefore
//! relative to the frame's own contrast. A frame whose strongest response is
//! negligible produces no gradient edges at all.
//!
//! Pixels without a valid normal are always edges: sensor holes must not let
//! a region bleed across them.
//!
//! Non-edge pixels are then grouped into 4-connected components (after one
//! round of edge dilation that seals diagonal leaks), their boundaries traced
//! with Moore following, and the contours reduced by Douglas-Peucker.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::normals::NormalImage;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("segmentation parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationParams {
    /// Hysteresis thresholds on the edge strength, which is the largest
    /// per-channel Sobel magnitude of the 0..255-scaled normal image,
    /// clamped to 255. A 90-degree crease between ideal planes lands
    /// around 50..90 depending on orientation; smoothing lowers it.
    pub canny_low: f64,
    pub canny_high: f64,
    /// Douglas-Peucker tolerance in pixels.
    pub epsilon: f64,
    /// Minimum region (and hole) pixel count.
    pub min_area: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            canny_low: 30.0,
            canny_high: 90.0,
            epsilon: 3.0,
            min_area: 300,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.canny_low.is_finite()
            && self.canny_high.is_finite()
            && 0.0 < self.canny_low
            && self.canny_low < self.canny_high)
        {
            return Err(SegmentationError::BadParams(format!(
                "thresholds ({}, {}) must satisfy 0 < low < high",
                self.canny_low, self.canny_high
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(SegmentationError::BadParams(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if self.min_area == 0 {
            return Err(SegmentationError::BadParams(
                "min_area must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Boolean edge raster.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl EdgeMask {
    pub fn from_parts(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        EdgeMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn is_edge(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn edge_count(&self) -> usize {
        self.data.iter().filter(|e| **e).count()
    }
}

/// Simplified contour of a candidate planar region, in pixel coordinates.
/// The outer ring has positive signed area, holes negative; `area` is the
/// net enclosed area in px².
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPolygon {
    pub vertices: Vec<[f64; 2]>,
    pub holes: Vec<Vec<[f64; 2]>>,
    pub area: f64,
    pub pixel_count: usize,
    /// Topmost-leftmost pixel of the source component.
    pub seed: (usize, usize),
}

impl PixelPolygon {
    /// Pixels covered by the polygon (even-odd rule over all rings, vertical
    /// spans half-open), for rasterizing the region back onto the depth grid.
    pub fn covered_pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.pixel_count);
        let rings: Vec<&[[f64; 2]]> = std::iter::once(self.vertices.as_slice())
            .chain(self.holes.iter().map(|h| h.as_slice()))
            .collect();
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            vmin = vmin.min(p[1]);
            vmax = vmax.max(p[1]);
        }
        let v0 = vmin.ceil().max(0.0) as usize;
        let v1 = vmax.floor().min(height as f64 - 1.0) as usize;
        let mut xs: Vec<f64> = Vec::new();
        for v in v0..=v1 {
            let y = v as f64;
            xs.clear();
            for ring in &rings {
                let n = ring.len();
                for i in 0..n {
                    let a = ring[i];
                    let b = ring[(i + 1) % n];
                    // Half-open span so shared vertices count once.
                    if (a[1] <= y && y < b[1]) || (b[1] <= y && y < a[1]) {
                        xs.push(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
                    }
                }
            }
            xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
            for pair in xs.chunks_exact(2) {
                let u0 = pair[0].ceil().max(0.0) as usize;
                let u1 = pair[1].floor().min(width as f64 - 1.0);
                if u1 < 0.0 {
                    continue;
                }
                for u in u0..=(u1 as usize) {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

/// Canny-style edge detection on the normal image.
pub fn detect_edges(
    nimg: &NormalImage,
    params: &SegmentationParams,
) -> Result<EdgeMask, SegmentationError> {
    params.validate()?;
    let (w, h) = (nimg.width(), nimg.height());
    let normals = nimg.normals();
    let valid = nimg.validity();

    // Strongest per-channel Sobel response; invalid neighbors take the
    // center's channel value so holes do not fake contrast.
    let mut strength = vec![0.0f32; w * h];
    let mut dir = vec![[0.0f32; 2]; w * h];
    {
        use rayon::prelude::*;
        strength
            .par_chunks_mut(w)
            .zip(dir.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (srow, drow))| {
                for x in 0..w {
                    if !valid[y * w + x] {
                        continue;
                    }
                    let mut best_sq = -1.0f32;
                    let mut best = [0.0f32; 2];
                    for ch in 0..3 {
                        let center = scale_channel(normals[y * w + x][ch]);
                        let sample = |dx: isize, dy: isize| -> f32 {
                            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                            let i = yy * w + xx;
                            if valid[i] {
                                scale_channel(normals[i][ch])
                            } else {
                                center
                            }
                        };
                        let tl = sample(-1, -1);
                        let tc = sample(0, -1);
                        let tr = sample(1, -1);
                        let ml = sample(-1, 0);
                        let mr = sample(1, 0);
                        let bl = sample(-1, 1);
                        let bc = sample(0, 1);
                        let br = sample(1, 1);
                        let gx = ((tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)) / 8.0;
                        let gy = ((bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)) / 8.0;
                        let sq = gx * gx + gy * gy;
                        if sq > best_sq {
                            best_sq = sq;
                            best = [gx, gy];
                        }
                    }
                    srow[x] = best_sq.max(0.0).sqrt();
                    drow[x] = best;
                }
            });
    }

    let mut edges = vec![false; w * h];

    {
        let low = params.canny_low as f32;
        let high = params.canny_high as f32;

        // Non-maximum suppression along the quantized gradient direction.
        // Ties keep the pixel nearer the raster origin so a two-pixel
        // plateau thins to a single chain.
        let mut kept = vec![false; w * h];
        {
            use rayon::prelude::*;
            kept.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                for x in 0..w {
                    let i = y * w + x;
                    if !valid[i] {
                        continue;
                    }
                    let s = strength[i].min(255.0);
                    if s < low {
                        continue;
                    }
                    let [gx, gy] = dir[i];
                    let at = |dx: isize, dy: isize| -> f32 {
                        let xx = x as isize + dx;
                        let yy = y as isize + dy;
                        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            return 0.0;
                        }
                        let j = yy as usize * w + xx as usize;
                        if valid[j] {
                            strength[j].min(255.0)
                        } else {
                            0.0
                        }
                    };
                    let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
                    let (a, b) = if !(22.5..157.5).contains(&angle) {
                        (at(-1, 0), at(1, 0))
                    } else if angle < 67.5 {
                        (at(-1, -1), at(1, 1))
                    } else if angle < 112.5 {
                        (at(0, -1), at(0, 1))
                    } else {
                        (at(1, -1), at(-1, 1))
                    };
                    row[x] = s > a && s >= b;
                }
            });
        }

        // Hysteresis: grow strong seeds through weak kept pixels, 8-connected.
        let mut queue: VecDeque<usize> = VecDeque::new();
        for i in 0..w * h {
            if kept[i] && strength[i].min(255.0) >= high {
                edges[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = x as isize + dx;
                    let yy = y as isize + dy;
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    if kept[j] && !edges[j] {
                        edges[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }

    // Sensor holes are unconditionally edges.
    for i in 0..w * h {
        if !valid[i] {
            edges[i] = true;
        }
    }

    Ok(EdgeMask {
        width: w,
        height: h,
        data: edges,
    })
}

#[inline]
fn scale_channel(c: f32) -> f32 {
    (c + 1.0) * 127.5
}

/// Extracts simplified region polygons from an edge mask.
///
/// The mask is dilated by one pixel, non-edge pixels are labeled into
/// 4-connected components, components below `min_area` pixels are discarded,
/// and each survivor is traced (outer boundary plus any enclosed holes of at
/// least `min_area` pixels) and simplified. Output is ordered by descending
/// pixel count, ties by topmost-leftmost seed.
pub fn extract_regions(
    mask: &EdgeMask,
    params: &SegmentationParams,
) -> Result<Vec<PixelPolygon>, SegmentationError> {
    params.validate()?;
    let (w, h) = (mask.width, mask.height);
    let dilated = dilate4(&mask.data, w, h);

    // Connected-component labels over non-edge pixels; 0 is background.
    let mut labels = vec![0u32; w * h];
    let mut components: Vec<(usize, Vec<u32>)> = Vec::new(); // (seed index, pixels)
    let mut queue: VecDeque<u32> = VecDeque::new();
    for start in 0..w * h {
        if dilated[start] || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        let mut pixels: Vec<u32> = Vec::new();
        labels[start] = label;
        queue.push_back(start as u32);
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let i = i as usize;
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if !dilated[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j as u32);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        components.push((start, pixels));
    }

    let mut out: Vec<PixelPolygon> = Vec::new();
    for (label0, (seed, pixels)) in components.iter().enumerate() {
        if pixels.len() < params.min_area {
            continue;
        }
        let label = label0 as u32 + 1;
        let member = |i: usize| labels[i] == label;
        let Some(outer_trace) = moore_trace(w, h, *seed, &member) else {
            continue;
        };
        let Some(mut outer) = simplify_to_simple_ring(&outer_trace, params.epsilon) else {
            continue;
        };
        if crate::geom2d::ring_signed_area(&outer) < 0.0 {
            outer.reverse();
        }

        let mut holes: Vec<Vec<[f64; 2]>> = Vec::new();
        for hole_pixels in enclosed_holes(w, h, pixels, &member) {
            if hole_pixels.len() < params.min_area {
                continue;
            }
            let hole_seed = *hole_pixels.iter().min().unwrap() as usize;
            let hole_set: std::collections::HashSet<u32> = hole_pixels.iter().copied().collect();
            let hole_member = |i: usize| hole_set.contains(&(i as u32));
            let Some(trace) = moore_trace(w, h, hole_seed, &hole_member) else {
                continue;
            };
            let Some(mut ring) = simplify_to_simple_ring(&trace, params.epsilon) else {
                continue;
            };
            if crate::geom2d::ring_signed_area(&ring) > 0.0 {
                ring.reverse();
            }
            holes.push(ring);
        }

        let net_area = crate::geom2d::ring_signed_area(&outer)
            + holes
                .iter()
                .map(|r| crate::geom2d::ring_signed_area(r))
                .sum::<f64>();
        if net_area < params.min_area as f64 {
            // The component passed the pixel gate but its simplified contour
            // encloses less; keep the area invariant strict and drop it.
            continue;
        }
        out.push(PixelPolygon {
            vertices: outer,
            holes,
            area: net_area,
            pixel_count: pixels.len(),
            seed: (*seed % w, *seed / w),
        });
    }

    out.sort_by(|a, b| {
        b.pixel_count
            .cmp(&a.pixel_count)
            .then((a.seed.1, a.seed.0).cmp(&(b.seed.1, b.seed.0)))
    });
    Ok(out)
}

fn dilate4(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                continue;
            }
            let mut any = false;
            if x > 0 {
                any |= mask[y * w + x - 1];
            }
            if x + 1 < w {
                any |= mask[y * w + x + 1];
            }
            if y > 0 {
                any |= mask[(y - 1) * w + x];
            }
            if y + 1 < h {
                any |= mask[(y + 1) * w + x];
            }
            if any {
                out[y * w + x] = true;
            }
        }
    }
    out
}

/// Moore boundary following from the component's topmost-leftmost pixel,
/// with Jacob's stopping criterion. Returns pixel-center coordinates.
fn moore_trace(
    w: usize,
    h: usize,
    seed: usize,
    member: &dyn Fn(usize) -> bool,
) -> Option<Vec<[f64; 2]>> {
    // Clockwise on screen, starting west.
    const DIRS: [(isize, isize); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    let at = |x: isize, y: isize| -> Option<usize> {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
            .then(|| y as usize * w + x as usize)
    };
    let is_member = |x: isize, y: isize| at(x, y).map(member).unwrap_or(false);

    let (sx, sy) = ((seed % w) as isize, (seed / w) as isize);
    if !is_member(sx, sy) {
        return None;
    }
    // The seed is first in raster order, so its west neighbor is outside.
    // The walk state is (pixel, backtrack direction); the boundary is the
    // cycle of that deterministic map, so the trace ends at the first
    // repeated state. The few steps before the cycle closes on itself (the
    // synthetic start state may not lie on it) are dropped.
    let mut contour = vec![[sx as f64, sy as f64]];
    let (mut cx, mut cy) = (sx, sy);
    let mut back_dir = 0usize; // direction from current toward the backtrack
    let mut seen: HashMap<(isize, isize, usize), usize> = HashMap::new();
    seen.insert((sx, sy, back_dir), 0);

    loop {
        let mut found = None;
        for step in 1..=8usize {
            let dir = (back_dir + step) % 8;
            let (dx, dy) = DIRS[dir];
            if is_member(cx + dx, cy + dy) {
                found = Some((dir, step));
                break;
            }
        }
        let Some((dir, step)) = found else {
            // Isolated pixel.
            return Some(contour);
        };
        // New backtrack: the last empty cell scanned, relative to the new
        // current pixel.
        let (dx, dy) = DIRS[dir];
        let prev_empty_dir = (back_dir + step - 1) % 8;
        let (px, py) = (cx + DIRS[prev_empty_dir].0, cy + DIRS[prev_empty_dir].1);
        cx += dx;
        cy += dy;
        back_dir = direction_index(px - cx, py - cy);
        if let Some(&at) = seen.get(&(cx, cy, back_dir)) {
            return Some(contour.split_off(at));
        }
        seen.insert((cx, cy, back_dir), contour.len());
        contour.push([cx as f64, cy as f64]);
    }
}

fn direction_index(dx: isize, dy: isize) -> usize {
    const DIRS: [(isize, isize); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    DIRS.iter().position(|d| *d == (dx, dy)).expect("unit step")
}

/// Non-member pixels enclosed by the component: flood the complement inward
/// from the component's expanded bounding box, 8-connected, and group what
/// the flood cannot reach.
fn enclosed_holes(
    w: usize,
    h: usize,
    pixels: &[u32],
    member: &dyn Fn(usize) -> bool,
) -> Vec<Vec<u32>> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for &p in pixels {
        let (x, y) = (p as usize % w, p as usize / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let x0 = x0.saturating_sub(1);
    let y0 = y0.saturating_sub(1);
    let x1 = (x1 + 1).min(w - 1);
    let y1 = (y1 + 1).min(h - 1);
    let bw = x1 - x0 + 1;
    let bh = y1 - y0 + 1;
    let local = |x: usize, y: usize| (y - y0) * bw + (x - x0);

    let mut outside = vec![false; bw * bh];
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for x in x0..=x1 {
        for y in [y0, y1] {
            if !member(y * w + x) && !outside[local(x, y)] {
                outside[local(x, y)] = true;
                queue.push_back((x, y));
            }
        }
    }
    for y in y0..=y1 {
        for x in [x0, x1] {
            if !member(y * w + x) && !outside[local(x, y)] {
                outside[local(x, y)] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let xx = x as isize + dx;
                let yy = y as isize + dy;
                if xx < x0 as isize || yy < y0 as isize || xx > x1 as isize || yy > y1 as isize {
                    continue;
                }
                let (xx, yy) = (xx as usize, yy as usize);
                if !member(yy * w + xx) && !outside[local(xx, yy)] {
                    outside[local(xx, yy)] = true;
                    queue.push_back((xx, yy));
                }
            }
        }
    }

    // Group the enclosed remainder.
    let mut seen = vec![false; bw * bh];
    let mut holes: Vec<Vec<u32>> = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let li = local(x, y);
            if member(y * w + x) || outside[li] || seen[li] {
                continue;
            }
            let mut group: Vec<u32> = Vec::new();
            seen[li] = true;
            let mut stack = vec![(x, y)];
            while let Some((sx, sy)) = stack.pop() {
                group.push((sy * w + sx) as u32);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let xx = sx as isize + dx;
                        let yy = sy as isize + dy;
                        if xx < x0 as isize
                            || yy < y0 as isize
                            || xx > x1 as isize
                            || yy > y1 as isize
                        {
                            continue;
                        }
                        let (xx, yy) = (xx as usize, yy as usize);
                        let lj = local(xx, yy);
                        if !member(yy * w + xx) && !outside[lj] && !seen[lj] {
                            seen[lj] = true;
                            stack.push((xx, yy));
                        }
                    }
                }
            }
            group.sort_unstable();
            holes.push(group);
        }
    }
    holes
}

/// Douglas-Peucker on a closed ring: split at the point farthest from the
/// start, simplify both chains, rejoin. Every input point stays within
/// `epsilon` of the output polyline.
pub fn simplify_closed(ring: &[[f64; 2]], epsilon: f64) -> Result<Vec<[f64; 2]>, SegmentationError> {
    if ring.len() < 3 {
        return Err(SegmentationError::BadParams(format!(
            "contour has {} points",
            ring.len()
        )));
    }
    let p0 = ring[0];
    let mut far = 0;
    let mut far_d = 0.0;
    for (i, p) in ring.iter().enumerate() {
        let d = (p[0] - p0[0]).powi(2) + (p[1] - p0[1]).powi(2);
        if d > far_d {
            far_d = d;
            far = i;
        }
    }
    if far == 0 {
        return Err(SegmentationError::BadParams(
            "contour is a single repeated point".into(),
        ));
    }
    let chain1 = &ring[0..=far];
    let mut chain2: Vec<[f64; 2]> = ring[far..].to_vec();
    chain2.push(p0);

    let mut out = douglas_peucker(chain1, epsilon);
    let tail = douglas_peucker(&chain2, epsilon);
    out.extend_from_slice(&tail[1..tail.len() - 1]);

    if out.len() < 3 || crate::geom2d::ring_signed_area(&out).abs() < 1e-9 {
        return Err(SegmentationError::BadParams(
            "contour simplifies to a degenerate ring".into(),
        ));
    }
    Ok(out)
}

/// Simplify a traced ring, backing off the tolerance until the result has no
/// properly crossing edges. A coarse epsilon can fold a long ragged contour
/// onto itself; the raw trace is crossing-free by construction, so halving
/// epsilon a few times and finally falling back to the trace itself always
/// recovers a usable ring unless the trace degenerates entirely.
pub fn simplify_to_simple_ring(trace: &[[f64; 2]], epsilon: f64) -> Option<Vec<[f64; 2]>> {
    let mut eps = epsilon;
    for _ in 0..4 {
        if let Ok(ring) = simplify_closed(trace, eps) {
            if !has_proper_self_intersection(&ring) {
                return Some(ring);
            }
        }
        eps *= 0.5;
    }
    (trace.len() >= 3
        && crate::geom2d::ring_signed_area(trace).abs() >= 1e-9
        && !has_proper_self_intersection(trace))
    .then(|| trace.to_vec())
}

/// Open-chain Douglas-Peucker keeping both endpoints.
pub fn douglas_peucker(points: &[[f64; 2]], epsilon: f64) -> Vec<[f64; 2]> {
    let n = points.len();
    if n <= 2 {
        return points.to_vec();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (points[lo], points[hi]);
        let mut worst = 0.0;
        let mut worst_i = lo;
        for (i, p) in points.iter().enumerate().take(hi).skip(lo + 1) {
            let d = point_segment_distance(*p, a, b);
            if d > worst {
                worst = d;
                worst_i = i;
            }
        }
        if worst > epsilon {
            keep[worst_i] = true;
            stack.push((lo, worst_i));
            stack.push((worst_i, hi));
        }
    }
    points
        .iter()
        .zip(&keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Distance from a point to a closed ring's polyline.
pub fn point_ring_distance(p: [f64; 2], ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        best = best.min(point_segment_distance(p, ring[i], ring[(i + 1) % n]));
    }
    best
}

/// True when two non-adjacent edges properly cross (interior intersection).
/// Touching at shared vertices, as traced spurs do, is allowed.
fn has_proper_self_intersection(ring: &[[f64; 2]]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            // Skip adjacent edges (they share an endpoint).
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            let d1 = orient(b1, b2, a1);
            let d2 = orient(b1, b2, a2);
            let d3 = orient(a1, a2, b1);
            let d4 = orient(a1, a2, b2);
            if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
                && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
            {
                return true;
            }
        }
    }
    false
}
