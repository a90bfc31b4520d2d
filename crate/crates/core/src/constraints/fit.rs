use nalgebra::{Matrix3, Point2, Vector2, Vector3, SVD};

use crate::error::{Error, Result};
use crate::geometry::{adjugate, DualConic, Ellipse};

/// Largest axis-aligned ellipse inscribed in a bbox `(x_min, y_min, x_max, y_max)`.
pub fn inscribed_bbox_ellipse(bbox: [f64; 4]) -> Result<Ellipse> {
    let [x0, y0, x1, y1] = bbox;
    let (a, b) = ((x1 - x0) * 0.5, (y1 - y0) * 0.5);
    let center = Point2::new((x0 + x1) * 0.5, (y0 + y1) * 0.5);
    if a >= b {
        Ellipse::new(center, Vector2::new(a, b), 0.0)
    } else {
        Ellipse::new(center, Vector2::new(b, a), std::f64::consts::FRAC_PI_2)
    }
}

/// Direct least-squares ellipse fit (numerically stable split of the scatter matrix).
pub fn fit_ellipse(points: &[Point2<f64>]) -> Result<Ellipse> {
    if points.len() < 6 {
        return Err(Error::InsufficientObservations {
            needed: 6,
            got: points.len(),
        });
    }
    // Normalise to zero mean, unit RMS radius.
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + p.coords)
        / n;
    let rms = (points
        .iter()
        .map(|p| (p.coords - mean).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    if !(rms > 0.0) || !rms.is_finite() {
        return Err(Error::NonEllipse("points are coincident".into()));
    }
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let q = (p.coords - mean) / rms;
        let d1 = Vector3::new(q.x * q.x, q.x * q.y, q.y * q.y);
        let d2 = Vector3::new(q.x, q.y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::NonEllipse("collinear points".into()))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let m = c1_inv * m;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for ev in m.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let svd = SVD::new(m - Matrix3::identity() * ev.re, false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::NonEllipse("svd failed".into()))?;
        let (imin, _) = svd.singular_values.argmin();
        let a1: Vector3<f64> = v_t.row(imin).transpose();
        let disc = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if disc > 0.0 && best.is_none_or(|(d, _)| disc / a1.norm_squared() > d) {
            best = Some((disc / a1.norm_squared(), a1));
        }
    }
    let a1 = best
        .ok_or_else(|| Error::NonEllipse("no elliptical solution".into()))?
        .1;
    let a2 = t * a1;
    let (a, b, c, d, e, f) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);
    let normalized = Matrix3::new(
        a,
        b / 2.0,
        d / 2.0,
        b / 2.0,
        c,
        e / 2.0,
        d / 2.0,
        e / 2.0,
        f,
    );
    // Undo the normalisation: x_n = S x with S = [I/rms, -mean/rms; 0, 1].
    let s = Matrix3::new(
        1.0 / rms,
        0.0,
        -mean.x / rms,
        0.0,
        1.0 / rms,
        -mean.y / rms,
        0.0,
        0.0,
        1.0,
    );
    let primal = s.transpose() * normalized * s;
    DualConic::new(adjugate(&primal))?.to_ellipse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_points_are_recovered() {
        let e = Ellipse::new(Point2::new(320.0, 200.0), Vector2::new(80.0, 30.0), 0.4).unwrap();
        let f = fit_ellipse(&e.polygon(40)).unwrap();
        assert!((f.center - e.center).norm() < 1e-6);
        assert!((f.semi_axes - e.semi_axes).norm() < 1e-6);
        assert!((f.angle - e.angle).sin().abs() < 1e-6);
    }

    #[test]
    fn partial_arc_still_fits() {
        let e = Ellipse::new(Point2::new(10.0, -5.0), Vector2::new(5.0, 2.0), -1.0).unwrap();
        let pts: Vec<_> = (0..30).map(|i| e.point_at(i as f64 * 0.1)).collect();
        let f = fit_ellipse(&pts).unwrap();
        assert!((f.center - e.center).norm() < 1e-6);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<_> = (0..10)
            .map(|i| Point2::new(i as f64, 2.0 * i as f64))
            .collect();
        assert!(fit_ellipse(&line).is_err());
        assert!(fit_ellipse(&line[..3]).is_err());
    }

    #[test]
    fn bbox_ellipse() {
        let e = inscribed_bbox_ellipse([0.0, 0.0, 4.0, 10.0]).unwrap();
        assert_eq!(e.center, Point2::new(2.0, 5.0));
        assert_eq!(e.semi_axes, Vector2::new(5.0, 2.0));
        let b = e.bbox();
        for (x, y) in b.iter().zip([0.0, 0.0, 4.0, 10.0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
