//! Simple polygons, shoelace areas and convex clipping.

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::hull::signed_area;

/// Simple polygon with counter-clockwise vertices. May be non-convex.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon2D {
    vertices: Vec<Point2<f64>>,
}

impl Polygon2D {
    /// Validates simplicity; clockwise input is reversed.
    pub fn new(mut vertices: Vec<Point2<f64>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::NonFinite("polygon".into()));
        }
        if let Some((i, j)) = first_self_intersection(&vertices) {
            return Err(Error::InvalidPolygon(format!(
                "edges {i} and {j} intersect"
            )));
        }
        let a = signed_area(&vertices);
        if a == 0.0 {
            return Err(Error::InvalidPolygon("zero area".into()));
        }
        if a < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Vertices of a convex polygon known to be simple, e.g. a sampled ellipse.
    /// Only finiteness and orientation are checked.
    pub(crate) fn from_convex(mut vertices: Vec<Point2<f64>>) -> Result<Self> {
        if vertices.len() < 3
            || vertices
                .iter()
                .any(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::InvalidPolygon("degenerate convex polygon".into()));
        }
        let a = signed_area(&vertices);
        if !(a.abs() > 0.0) {
            return Err(Error::InvalidPolygon("zero area".into()));
        }
        if a < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Skips validation; used for clip results, which may contain zero-width bridges.
    pub(crate) fn from_ring(vertices: Vec<Point2<f64>>) -> Self {
        Self { vertices }
    }

    pub fn rectangle(bbox: [f64; 4]) -> Result<Self> {
        Self::new(vec![
            Point2::new(bbox[0], bbox[1]),
            Point2::new(bbox[2], bbox[1]),
            Point2::new(bbox[2], bbox[3]),
            Point2::new(bbox[0], bbox[3]),
        ])
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        (0..n).all(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            let c = v[(i + 2) % n];
            (b - a).perp(&(c - b)) >= -1e-12 * (b - a).norm() * (c - b).norm()
        })
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            if (v[i].y > p.y) != (v[j].y > p.y)
                && p.x < (v[j].x - v[i].x) * (p.y - v[i].y) / (v[j].y - v[i].y) + v[i].x
            {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

fn segments_intersect(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>, d: &Point2<f64>) -> bool {
    let o = |p: &Point2<f64>, q: &Point2<f64>, r: &Point2<f64>| (q - p).perp(&(r - p));
    let d1 = o(c, d, a);
    let d2 = o(c, d, b);
    let d3 = o(a, b, c);
    let d4 = o(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: &Point2<f64>, q: &Point2<f64>, r: &Point2<f64>| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

fn first_self_intersection(v: &[Point2<f64>]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in i + 1..n {
            // Adjacent edges share a vertex by construction.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(&a, &b, &v[j], &v[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// IoU of two axis-aligned boxes `(x_min, y_min, x_max, y_max)`.
pub fn bbox_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let inter = [
        a[0].max(b[0]),
        a[1].max(b[1]),
        a[2].min(b[2]),
        a[3].min(b[3]),
    ];
    let i = area(&inter);
    let u = area(a) + area(b) - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

/// Shoelace area; errors for fewer than 3 vertices.
pub fn polygon_area(points: &[Point2<f64>]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidPolygon(format!(
            "need at least 3 vertices, got {}",
            points.len()
        )));
    }
    Ok(signed_area(points))
}

/// Sutherland-Hodgman clipping of `subject` against the convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut output = subject.to_vec();
    let mut input = Vec::with_capacity(subject.len() + clip.len());
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let edge = b - a;
        let side = |p: &Point2<f64>| edge.perp(&(p - a));
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let k = input.len();
        for j in 0..k {
            let cur = input[j];
            let prev = input[(j + k - 1) % k];
            let (sc, sp) = (side(&cur), side(&prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(prev + (cur - prev) * (sp / (sp - sc)));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(prev + (cur - prev) * (sp / (sp - sc)));
            }
        }
    }
    output
}

/// Intersection of two simple polygons, one of which must be convex.
///
/// The non-convex operand is clipped against the convex one, so the result can carry
/// zero-width bridges; its shoelace area is exact. Returns `None` for an empty
/// intersection.
pub fn polygon_clip(a: &Polygon2D, b: &Polygon2D) -> Result<Option<Polygon2D>> {
    let (ca, cb) = (a.is_convex(), b.is_convex());
    let (clip, subject) = if ca && cb {
        // Fewer clip edges means fewer passes.
        if a.vertices.len() <= b.vertices.len() {
            (a, b)
        } else {
            (b, a)
        }
    } else if ca {
        (a, b)
    } else if cb {
        (b, a)
    } else {
        return Err(Error::InvalidPolygon(
            "clipping needs at least one convex operand".into(),
        ));
    };
    let ring = clip_convex(subject.vertices(), clip.vertices());
    if ring.len() < 3 || signed_area(&ring).abs() <= 0.0 {
        return Ok(None);
    }
    Ok(Some(Polygon2D::from_ring(ring)))
}

/// Intersection-over-union of two polygons, one of which is convex.
pub fn polygon_iou(a: &Polygon2D, b: &Polygon2D) -> Result<f64> {
    let inter = polygon_clip(a, b)?.map_or(0.0, |p| p.area().max(0.0));
    let union = a.area() + b.area() - inter;
    if !(union > 0.0) {
        return Err(Error::UndefinedMetric("union area is zero".into()));
    }
    Ok((inter / union).clamp(0.0, 1.0))
}
