use nalgebra::{DVector, Matrix3, Matrix4, Point3, Rotation3, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::EllipsoidParams;

/// Minimum-volume enclosing ellipsoid by Khachiyan's barycentric iteration.
///
/// Stops when every Mahalanobis value lies within a relative `tol` of `d + 1`
/// (the optimality conditions), with away steps to drop interior points.
pub fn mvee(points: &[Point3<f64>], tol: f64, max_iterations: usize) -> Result<EllipsoidParams> {
    let n = points.len();
    if n < 4 {
        return Err(Error::InsufficientObservations { needed: 4, got: n });
    }
    let q: Vec<Vector4<f64>> = points.iter().map(|p| p.to_homogeneous()).collect();
    let mut u = DVector::from_element(n, 1.0 / n as f64);
    let d = 3.0;
    // Scatter inverse and Mahalanobis values are updated by Sherman-Morrison and
    // recomputed from scratch every REFRESH steps to bound round-off.
    const REFRESH: usize = 500;
    let mut xi = Matrix4::zeros();
    let mut m = vec![0.0; n];
    for it in 0..max_iterations {
        if it % REFRESH == 0 {
            let mut x = Matrix4::zeros();
            for (c, uj) in q.iter().zip(u.iter()) {
                x += c * c.transpose() * *uj;
            }
            xi = x
                .try_inverse()
                .ok_or_else(|| Error::DegenerateQuadric("points are coplanar".into()))?;
            for (mi, c) in m.iter_mut().zip(&q) {
                *mi = (c.transpose() * xi * c)[0];
            }
        }
        let (mut jmax, mut mmax, mut jmin, mut mmin) = (0, f64::NEG_INFINITY, 0, f64::INFINITY);
        for (j, &mj) in m.iter().enumerate() {
            if mj > mmax {
                (jmax, mmax) = (j, mj);
            }
            if u[j] > 0.0 && mj < mmin {
                (jmin, mmin) = (j, mj);
            }
        }
        if mmax <= (1.0 + tol) * (d + 1.0) && mmin >= (1.0 - tol) * (d + 1.0) {
            break;
        }
        // Towards step on the most violated point, or an away step (Wolfe-Atwood) on the least needed one.
        let (j, mj, step, drop) = if mmax - (d + 1.0) >= (d + 1.0) - mmin {
            (
                jmax,
                mmax,
                (mmax - d - 1.0) / ((d + 1.0) * (mmax - 1.0)),
                false,
            )
        } else {
            let full = -u[jmin] / (1.0 - u[jmin]);
            let s = (mmin - d - 1.0) / ((d + 1.0) * (mmin - 1.0));
            (jmin, mmin, s.max(full), s <= full)
        };
        u *= 1.0 - step;
        u[j] = if drop { 0.0 } else { u[j] + step };
        let a = step / (1.0 - step);
        let v = xi * q[j];
        let denom = 1.0 + a * mj;
        xi = (xi - v * v.transpose() * (a / denom)) / (1.0 - step);
        for (mi, c) in m.iter_mut().zip(&q) {
            let t = c.dot(&v);
            *mi = (*mi - a * t * t / denom) / (1.0 - step);
        }
    }
    let mut center = Vector3::zeros();
    for (j, uj) in u.iter().enumerate() {
        center += points[j].coords * *uj;
    }
    let mut cov = Matrix3::zeros();
    for (j, uj) in u.iter().enumerate() {
        let p = points[j].coords;
        cov += p * p.transpose() * *uj;
    }
    cov -= center * center.transpose();
    // Ellipse: (x−c)ᵀ A (x−c) ≤ 1 with A = cov⁻¹ / d, so semi-axes are sqrt(d λ(cov)).
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    if axes.determinant() < 0.0 {
        axes.set_column(2, &-axes.column(2));
    }
    let semi = Vector3::from_iterator(
        order
            .iter()
            .map(|&i| (d * eig.eigenvalues[i].max(0.0)).sqrt()),
    );
    // Khachiyan's ellipsoid encloses the points only up to (1 + tol); scale so that it does.
    let shape_inv = axes * Matrix3::from_diagonal(&semi.map(|s| 1.0 / (s * s))) * axes.transpose();
    let worst = points
        .iter()
        .map(|p| {
            let v = p.coords - center;
            (v.transpose() * shape_inv * v)[0]
        })
        .fold(0.0, f64::max);
    let scale = worst.max(1.0).sqrt();
    EllipsoidParams::from_rotation(center, Rotation3::from_matrix_unchecked(axes), semi * scale)
}
