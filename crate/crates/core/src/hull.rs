//! Convex hull extraction (QuickHull), closed-polygon Douglas-Peucker simplification and
//! conversion of polygon edges to homogeneous image lines.

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::geometry::Line2;

/// Minimum cross product of consecutive hull edges, in px².
pub const CONVEXITY_EPS: f64 = 1e-9;

/// Closed polyline of pixel coordinates, e.g. a segmentation boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour2D {
    points: Vec<Point2<f64>>,
}

impl Contour2D {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Validation(format!(
                "contour needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::NonFinite("contour".into()));
        }
        for i in 0..points.len() {
            let j = (i + 1) % points.len();
            if (points[i] - points[j]).norm() <= 1e-9 {
                return Err(Error::Validation(format!(
                    "contour points {i} and {j} coincide"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Shoelace area; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn bbox(&self) -> [f64; 4] {
        bbox(&self.points)
    }

    /// At most `max` points at uniform index spacing.
    pub fn subsample(&self, max: usize) -> Vec<Point2<f64>> {
        let n = self.points.len();
        if n <= max {
            return self.points.clone();
        }
        (0..max).map(|i| self.points[i * n / max]).collect()
    }

    /// Lines through the edges of the Douglas-Peucker simplified ring. Orientation is
    /// arbitrary for concave rings.
    pub fn edge_lines(&self, tol: f64) -> Result<Vec<Line2>> {
        let ring = if tol > 0.0 {
            simplify_ring(&self.points, tol)
        } else {
            self.points.clone()
        };
        if ring.len() < 3 {
            return Err(Error::DegenerateHull(format!(
                "contour simplified to {} vertices",
                ring.len()
            )));
        }
        ring_lines(&ring)
    }
}

/// Strictly convex, counter-clockwise polygon.
#[derive(Clone, Debug, PartialEq)]
pub struct HullPolygon {
    vertices: Vec<Point2<f64>>,
}

impl HullPolygon {
    /// Validates strict convexity and counter-clockwise orientation.
    pub fn new(vertices: Vec<Point2<f64>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegenerateHull(format!(
                "hull needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            let c = cross(&vertices[i], &vertices[(i + 1) % n], &vertices[(i + 2) % n]);
            if !(c > CONVEXITY_EPS) {
                return Err(Error::DegenerateHull(format!(
                    "vertex {} breaks strict convexity (cross {c:e})",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| (self.vertices[(i + 1) % n] - self.vertices[i]).norm())
            .sum()
    }

    pub fn centroid(&self) -> Point2<f64> {
        let n = self.vertices.len();
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.x * q.y - q.x * p.y;
            a += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (3.0 * a), cy / (3.0 * a))
    }

    /// Signed distance of `p` to the boundary, positive inside.
    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        hull_edges(self)
            .iter()
            .map(|l| l.eval(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// z-component of `(b - a) × (c - b)`.
fn cross(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    let u = b - a;
    let v = c - b;
    u.x * v.y - u.y * v.x
}

/// z-component of `(b - a) × (p - a)`; positive when `p` is left of `a → b`.
fn orient(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> f64 {
    let u = b - a;
    let v = p - a;
    u.x * v.y - u.y * v.x
}

pub(crate) fn signed_area(points: &[Point2<f64>]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    0.5 * s
}

pub(crate) fn bbox(points: &[Point2<f64>]) -> [f64; 4] {
    points.iter().fold(
        [
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ],
        |b, p| [b[0].min(p.x), b[1].min(p.y), b[2].max(p.x), b[3].max(p.y)],
    )
}

/// QuickHull over the contour points.
pub fn quickhull(contour: &Contour2D) -> Result<HullPolygon> {
    quickhull_points(contour.points())
}

/// QuickHull over an arbitrary point set. Collinear boundary points are dropped.
pub fn quickhull_points(points: &[Point2<f64>]) -> Result<HullPolygon> {
    if points.len() < 3 {
        return Err(Error::DegenerateHull(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let key = |p: &Point2<f64>| (p.x, p.y);
    let lo = points
        .iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .copied()
        .unwrap();
    let hi = points
        .iter()
        .max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .copied()
        .unwrap();
    let extent = (hi - lo).norm();
    if extent == 0.0 {
        return Err(Error::DegenerateHull("all points coincide".into()));
    }
    let eps = 1e-12 * extent * extent;

    let below: Vec<Point2<f64>> = points
        .iter()
        .filter(|p| orient(&lo, &hi, p) < -eps)
        .copied()
        .collect();
    let above: Vec<Point2<f64>> = points
        .iter()
        .filter(|p| orient(&hi, &lo, p) < -eps)
        .copied()
        .collect();

    let mut hull = vec![lo];
    find_hull(&below, &lo, &hi, eps, &mut hull);
    hull.push(hi);
    find_hull(&above, &hi, &lo, eps, &mut hull);

    let hull = drop_flat_vertices(hull);
    if hull.len() < 3 {
        return Err(Error::DegenerateHull("points are collinear".into()));
    }
    HullPolygon::new(hull)
}

/// Appends the hull vertices strictly right of `p → q`, in order from `p` to `q`.
fn find_hull(
    set: &[Point2<f64>],
    p: &Point2<f64>,
    q: &Point2<f64>,
    eps: f64,
    out: &mut Vec<Point2<f64>>,
) {
    let Some(far) = set
        .iter()
        .map(|s| (orient(p, q, s), s))
        .filter(|(d, _)| *d < -eps)
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .map(|(_, s)| *s)
    else {
        return;
    };
    let left: Vec<Point2<f64>> = set
        .iter()
        .filter(|s| orient(p, &far, s) < -eps)
        .copied()
        .collect();
    let right: Vec<Point2<f64>> = set
        .iter()
        .filter(|s| orient(&far, q, s) < -eps)
        .copied()
        .collect();
    find_hull(&left, p, &far, eps, out);
    out.push(far);
    find_hull(&right, &far, q, eps, out);
}

fn drop_flat_vertices(mut ring: Vec<Point2<f64>>) -> Vec<Point2<f64>> {
    loop {
        let n = ring.len();
        if n < 3 {
            return ring;
        }
        let flat = (0..n).find(|&i| {
            cross(&ring[(i + n - 1) % n], &ring[i], &ring[(i + 1) % n]) <= CONVEXITY_EPS
        });
        match flat {
            Some(i) => {
                ring.remove(i);
            }
            None => return ring,
        }
    }
}

fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn douglas_peucker(chain: &[Point2<f64>], tol: f64, keep: &mut Vec<bool>, offset: usize) {
    if chain.len() < 3 {
        return;
    }
    let a = chain[0];
    let b = chain[chain.len() - 1];
    let (idx, dist) = chain[1..chain.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1, point_segment_distance(p, &a, &b)))
        .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if dist > tol {
        keep[offset + idx] = true;
        douglas_peucker(&chain[..=idx], tol, keep, offset);
        douglas_peucker(&chain[idx..], tol, keep, offset + idx);
    }
}

/// Indices of the mutually farthest pair of points.
fn diametral_pair(points: &[Point2<f64>]) -> (usize, usize) {
    let mut best = (0, 1, -1.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = (points[i] - points[j]).norm_squared();
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}

/// Douglas-Peucker on a closed ring, anchored at its diametral pair. Order is preserved.
pub fn simplify_ring(ring: &[Point2<f64>], tol: f64) -> Vec<Point2<f64>> {
    let n = ring.len();
    if n <= 3 || tol <= 0.0 {
        return ring.to_vec();
    }
    let (i, j) = diametral_pair(ring);
    // Rotate so the ring starts at `i`; `j` then sits at `j - i`.
    let rotated: Vec<Point2<f64>> = (0..n).map(|k| ring[(i + k) % n]).collect();
    let split = j - i;
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[split] = true;
    douglas_peucker(&rotated[..=split], tol, &mut keep, 0);
    let mut closed = rotated.clone();
    closed.push(rotated[0]);
    douglas_peucker(&closed[split..], tol, &mut keep, split);
    (0..n).filter(|&k| keep[k]).map(|k| rotated[k]).collect()
}

/// Douglas-Peucker simplification of a hull followed by a convexity pass.
pub fn simplify(h: &HullPolygon, tol: f64) -> Result<HullPolygon> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be >= 0, got {tol}"
        )));
    }
    if tol == 0.0 || h.len() == 3 {
        return Ok(h.clone());
    }
    let ring = simplify_ring(h.vertices(), tol);
    if ring.len() < 3 {
        return Err(Error::DegenerateHull(format!(
            "simplification at tol {tol} left {} vertices",
            ring.len()
        )));
    }
    quickhull_points(&ring)
}

/// [`simplify`] followed by geometric tolerance growth until at most `max_edges` remain.
/// `max_edges == 0` disables the cap.
pub fn simplify_capped(h: &HullPolygon, tol: f64, max_edges: usize) -> Result<HullPolygon> {
    let mut out = simplify(h, tol)?;
    if max_edges == 0 {
        return Ok(out);
    }
    let mut t = tol.max(0.25);
    while out.len() > max_edges.max(3) {
        t *= 1.5;
        out = simplify(h, t)?;
    }
    Ok(out)
}

fn ring_lines(ring: &[Point2<f64>]) -> Result<Vec<Line2>> {
    let n = ring.len();
    (0..n)
        .map(|i| Line2::through(&ring[i], &ring[(i + 1) % n]))
        .collect()
}

/// One normalized line per edge, positive on the hull interior.
pub fn hull_edges(h: &HullPolygon) -> Vec<Line2> {
    ring_lines(h.vertices()).expect("strictly convex hull has non-degenerate edges")
}
