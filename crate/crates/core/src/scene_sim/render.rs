use nalgebra::{Point2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NoiseSpec, SceneObject};
use crate::error::{Error, Result};
use crate::geometry::{project_quadric, CameraView, Ellipse};

/// Points per rendered contour.
pub const CONTOUR_POINTS: usize = 128;
/// Rays of the angular sweep over a union of ellipses.
pub const SWEEP_SAMPLES: usize = 2048;

/// Polygon whose `n` edges are tangent to `e` at uniformly spaced parameters.
pub fn tangent_polygon(e: &Ellipse, n: usize) -> Vec<Point2<f64>> {
    let half = std::f64::consts::PI / n as f64;
    let r = e.rotation();
    (0..n)
        .map(|k| {
            let m = 2.0 * half * k as f64 + half;
            let v = Vector2::new(e.semi_axes.x * m.cos(), e.semi_axes.y * m.sin()) / half.cos();
            e.center + r * v
        })
        .collect()
}

/// Far exit distance of the ray `c + s d` from an ellipse, if it meets it.
fn ray_exit(e: &Ellipse, c: &Point2<f64>, d: &Vector2<f64>) -> Option<f64> {
    let inv = e.shape().try_inverse()?;
    let o = c - e.center;
    let a = d.dot(&(inv * d));
    let b = d.dot(&(inv * o));
    let c0 = o.dot(&(inv * o)) - 1.0;
    let disc = b * b - a * c0;
    if disc < 0.0 {
        return None;
    }
    let s = (-b + disc.sqrt()) / a;
    (s > 0.0).then_some(s)
}

/// Outline of a union of ellipses by an angular sweep from the centre of the largest one,
/// resampled to `n` points equally spaced in arc length.
pub fn union_boundary(ellipses: &[Ellipse], n: usize) -> Result<(Vec<Point2<f64>>, Point2<f64>)> {
    let main = ellipses
        .iter()
        .max_by(|a, b| a.area().total_cmp(&b.area()))
        .ok_or_else(|| Error::InvalidParameter("no ellipses".into()))?;
    let c = main.center;
    let mut ring = Vec::with_capacity(SWEEP_SAMPLES);
    for j in 0..SWEEP_SAMPLES {
        let th = std::f64::consts::TAU * j as f64 / SWEEP_SAMPLES as f64;
        let d = Vector2::new(th.cos(), th.sin());
        let s = ellipses
            .iter()
            .filter_map(|e| ray_exit(e, &c, &d))
            .fold(0.0, f64::max);
        ring.push(c + d * s);
    }
    Ok((resample_closed(&ring, n), c))
}

fn resample_closed(ring: &[Point2<f64>], n: usize) -> Vec<Point2<f64>> {
    let m = ring.len();
    let seg: Vec<f64> = (0..m)
        .map(|i| (ring[(i + 1) % m] - ring[i]).norm())
        .collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(n);
    let (mut i, mut acc) = (0usize, 0.0);
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while acc + seg[i] < target && i + 1 < m {
            acc += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 {
            (target - acc) / seg[i]
        } else {
            0.0
        };
        out.push(ring[i] + (ring[(i + 1) % m] - ring[i]) * t);
    }
    out
}

/// Segmentation contour of `obj` seen from `cam`, with radial noise and dropout.
pub fn render_contour<R: Rng>(
    obj: &SceneObject,
    cam: &CameraView,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<Point2<f64>>> {
    let ellipses = obj
        .members
        .iter()
        .map(|m| project_quadric(&m.dual(), cam).and_then(|c| c.to_ellipse()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::NotVisible(format!("object {}: {e}", obj.id)))?;
    let (mut pts, c) = if ellipses.len() == 1 {
        let e = &ellipses[0];
        let p = if noise.exact_tangent {
            tangent_polygon(e, CONTOUR_POINTS)
        } else {
            (0..CONTOUR_POINTS)
                .map(|k| e.point_at(std::f64::consts::TAU * k as f64 / CONTOUR_POINTS as f64))
                .collect()
        };
        (p, e.center)
    } else {
        union_boundary(&ellipses, CONTOUR_POINTS)?
    };
    if noise.pixel_sigma > 0.0 {
        let nd = Normal::new(0.0, noise.pixel_sigma).expect("sigma validated");
        for p in &mut pts {
            if let Some(dir) = (*p - c).try_normalize(1e-12) {
                *p += dir * nd.sample(rng);
            }
        }
    }
    if noise.contour_dropout > 0.0 {
        let drop = (noise.contour_dropout * pts.len() as f64).round() as usize;
        if drop > 0 {
            let start = rng.random_range(0..pts.len());
            let n = pts.len();
            pts = (0..n - drop).map(|k| pts[(start + drop + k) % n]).collect();
        }
    }
    Ok(pts)
}
