//! Shared 2-D polygon machinery: shoelace quantities, boolean set
//! operations, convex hulls, half-plane clipping, and triangulation.
//!
//! Boolean operations and triangulation are delegated to the `geo` crate;
//! everything here wraps them behind plain ring types (`Vec<[f64; 2]>`) so
//! callers never touch `geo` directly. Outer rings are normalized to
//! positive signed area, holes to negative.

use geo::{Area, BooleanOps, Centroid, ConvexHull, TriangulateEarcut};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("degenerate polygon: {0}")]
    Degenerate(String),
}

pub type Ring = Vec<[f64; 2]>;

/// Polygon with optional holes. Rings are open (no repeated last point).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon2 {
    pub outer: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon2 {
    /// Normalizes orientation (outer positive, holes negative) and rejects
    /// rings with fewer than 3 points or non-finite coordinates.
    pub fn new(outer: Ring, holes: Vec<Ring>) -> Result<Self, GeomError> {
        let mut outer = checked_ring(outer)?;
        if ring_signed_area(&outer) < 0.0 {
            outer.reverse();
        }
        let holes = holes
            .into_iter()
            .map(|h| {
                let mut h = checked_ring(h)?;
                if ring_signed_area(&h) > 0.0 {
                    h.reverse();
                }
                Ok(h)
            })
            .collect::<Result<Vec<_>, GeomError>>()?;
        Ok(Polygon2 { outer, holes })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon2 {
            outer: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            holes: Vec::new(),
        }
    }

    /// Net enclosed area (outer minus holes).
    pub fn area(&self) -> f64 {
        to_geo(self).unsigned_area()
    }

    /// Area centroid accounting for holes.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        to_geo(self).centroid().map(|c| [c.x(), c.y()])
    }

    /// Even-odd containment. Points within `eps` of any ring count as
    /// inside, so boundary queries are stable.
    pub fn contains_point(&self, p: [f64; 2], eps: f64) -> bool {
        let near = |ring: &Ring| ring_distance(ring, p) <= eps;
        if near(&self.outer) || self.holes.iter().any(near) {
            return true;
        }
        if !ring_contains(&self.outer, p) {
            return false;
        }
        !self.holes.iter().any(|h| ring_contains(h, p))
    }
}

fn ring_contains(ring: &[[f64; 2]], [px, py]: [f64; 2]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % n];
        if (y0 > py) != (y1 > py) {
            let x_cross = x0 + (py - y0) / (y1 - y0) * (x1 - x0);
            if px < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn ring_distance(ring: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = ring.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        };
        let (ex, ey) = (p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
        best = best.min((ex * ex + ey * ey).sqrt());
    }
    best
}

fn checked_ring(ring: Ring) -> Result<Ring, GeomError> {
    if ring.len() < 3 {
        return Err(GeomError::Degenerate(format!(
            "ring has {} points",
            ring.len()
        )));
    }
    if ring.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(GeomError::Degenerate("non-finite coordinate".into()));
    }
    Ok(ring)
}

/// Shoelace signed area; positive for counter-clockwise rings (in the
/// right-handed interpretation of the coordinate axes).
pub fn ring_signed_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn to_geo(p: &Polygon2) -> geo::Polygon<f64> {
    let ls = |r: &Ring| geo::LineString::from(r.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>());
    geo::Polygon::new(ls(&p.outer), p.holes.iter().map(ls).collect())
}

fn from_geo(p: &geo::Polygon<f64>) -> Polygon2 {
    let ring = |ls: &geo::LineString<f64>| -> Ring {
        let mut r: Ring = ls.coords().map(|c| [c.x, c.y]).collect();
        if r.len() > 1 && r.first() == r.last() {
            r.pop();
        }
        r
    };
    let outer = ring(p.exterior());
    let holes = p.interiors().iter().map(ring).collect();
    // geo output rings are already correctly oriented; renormalize anyway so
    // the invariant never depends on upstream behavior.
    Polygon2::new(outer, holes).unwrap_or(Polygon2 {
        outer: Vec::new(),
        holes: Vec::new(),
    })
}

fn from_geo_multi(mp: &geo::MultiPolygon<f64>) -> Vec<Polygon2> {
    mp.0.iter()
        .map(from_geo)
        .filter(|p| p.outer.len() >= 3 && p.area() > 0.0)
        .collect()
}

/// Boolean union. The result may hold several disjoint polygons.
pub fn polygon_union_2d(a: &Polygon2, b: &Polygon2) -> Result<Vec<Polygon2>, GeomError> {
    guard_op(a)?;
    guard_op(b)?;
    Ok(from_geo_multi(&to_geo(a).union(&to_geo(b))))
}

/// Boolean intersection.
pub fn polygon_intersection_2d(a: &Polygon2, b: &Polygon2) -> Result<Vec<Polygon2>, GeomError> {
    guard_op(a)?;
    guard_op(b)?;
    Ok(from_geo_multi(&to_geo(a).intersection(&to_geo(b))))
}

/// Boolean difference `a \ b`.
pub fn polygon_difference_2d(a: &Polygon2, b: &Polygon2) -> Result<Vec<Polygon2>, GeomError> {
    guard_op(a)?;
    guard_op(b)?;
    Ok(from_geo_multi(&to_geo(a).difference(&to_geo(b))))
}

fn guard_op(p: &Polygon2) -> Result<(), GeomError> {
    if p.outer.len() < 3 {
        return Err(GeomError::Degenerate("outer ring has < 3 points".into()));
    }
    Ok(())
}

pub fn intersection_area(a: &Polygon2, b: &Polygon2) -> f64 {
    match polygon_intersection_2d(a, b) {
        Ok(parts) => total_area(&parts),
        Err(_) => 0.0,
    }
}

pub fn total_area(polys: &[Polygon2]) -> f64 {
    polys.iter().map(|p| p.area()).sum()
}

/// Folds a whole set into its union.
pub fn union_all(polys: &[Polygon2]) -> Result<Vec<Polygon2>, GeomError> {
    let mut acc: Vec<Polygon2> = Vec::new();
    for p in polys {
        guard_op(p)?;
        if acc.is_empty() {
            acc.push(p.clone());
            continue;
        }
        let geo_acc = geo::MultiPolygon(acc.iter().map(to_geo).collect::<Vec<_>>());
        let merged = geo_acc.union(&geo::MultiPolygon(vec![to_geo(p)]));
        acc = from_geo_multi(&merged);
    }
    Ok(acc)
}

/// Area of the union of two polygon sets.
pub fn union_area_sets(a: &[Polygon2], b: &[Polygon2]) -> f64 {
    let ga = geo::MultiPolygon(a.iter().map(to_geo).collect::<Vec<_>>());
    let gb = geo::MultiPolygon(b.iter().map(to_geo).collect::<Vec<_>>());
    ga.union(&gb).unsigned_area()
}

/// Area of the intersection of two polygon sets.
pub fn intersection_area_sets(a: &[Polygon2], b: &[Polygon2]) -> f64 {
    let ga = geo::MultiPolygon(a.iter().map(to_geo).collect::<Vec<_>>());
    let gb = geo::MultiPolygon(b.iter().map(to_geo).collect::<Vec<_>>());
    ga.intersection(&gb).unsigned_area()
}

/// Convex hull of a point set, returned counter-clockwise.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Ring, GeomError> {
    if points.len() < 3 {
        return Err(GeomError::Degenerate("hull needs at least 3 points".into()));
    }
    let mp = geo::MultiPoint::from(
        points
            .iter()
            .map(|p| geo::Point::new(p[0], p[1]))
            .collect::<Vec<_>>(),
    );
    let hull = mp.convex_hull();
    let mut ring: Ring = hull.exterior().coords().map(|c| [c.x, c.y]).collect();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 || ring_signed_area(&ring).abs() < 1e-12 {
        return Err(GeomError::Degenerate("hull is collinear".into()));
    }
    if ring_signed_area(&ring) < 0.0 {
        ring.reverse();
    }
    Ok(ring)
}

/// Clips a convex ring against the half-plane `n . p <= c`
/// (Sutherland-Hodgman step). Returns an empty ring when fully outside.
pub fn clip_halfplane(ring: &[[f64; 2]], n: [f64; 2], c: f64) -> Ring {
    let inside = |p: &[f64; 2]| n[0] * p[0] + n[1] * p[1] <= c;
    let mut out: Ring = Vec::with_capacity(ring.len() + 2);
    let len = ring.len();
    for i in 0..len {
        let cur = ring[i];
        let next = ring[(i + 1) % len];
        let (ci, ni) = (inside(&cur), inside(&next));
        if ci {
            out.push(cur);
        }
        if ci != ni {
            let da = n[0] * cur[0] + n[1] * cur[1] - c;
            let db = n[0] * next[0] + n[1] * next[1] - c;
            let t = da / (da - db);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

/// Earcut triangulation of a polygon with holes.
pub fn triangulate(p: &Polygon2) -> Vec<[[f64; 2]; 3]> {
    to_geo(p)
        .earcut_triangles()
        .into_iter()
        .map(|t| {
            let [a, b, c] = t.to_array();
            [[a.x, a.y], [b.x, b.y], [c.x, c.y]]
        })
        .collect()
}
