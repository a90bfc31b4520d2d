use nalgebra::{Matrix2, Matrix3, Point2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use super::Line2;
use crate::error::{Error, Result};

/// Symmetric 3×3 dual conic in pixel coordinates, normalized to unit Frobenius norm
/// with a non-negative (3,3) entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualConic {
    m: Matrix3<f64>,
}

impl DualConic {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dual conic".into()));
        }
        let sym = (m + m.transpose()) * 0.5;
        let n = sym.norm();
        if n == 0.0 {
            return Err(Error::NonEllipse("zero conic".into()));
        }
        let mut m = sym / n;
        if m[(2, 2)] < 0.0 {
            m = -m;
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Point conic `adj(C*)`, unit Frobenius norm, negative inside the ellipse.
    pub fn primal(&self) -> Matrix3<f64> {
        let a = adjugate(&self.m);
        let a = if a[(0, 0)] + a[(1, 1)] < 0.0 { -a } else { a };
        a / a.norm()
    }

    /// Centre, semi-axes (major first) and orientation of the major axis.
    pub fn to_ellipse(&self) -> Result<Ellipse> {
        let w = self.m[(2, 2)];
        if w.abs() < 1e-14 {
            return Err(Error::NonEllipse(
                "dual conic has a vanishing (3,3) entry".into(),
            ));
        }
        // Scale so that C*[2,2] = -1: C* = [M - c cᵀ, -c; -cᵀ, -1].
        let n = self.m / (-w);
        let c = Vector2::new(-n[(0, 2)], -n[(1, 2)]);
        let shape: Matrix2<f64> = n.fixed_view::<2, 2>(0, 0).into_owned() + c * c.transpose();
        Ellipse::from_shape(Point2::from(c), (shape + shape.transpose()) * 0.5)
    }
}

/// Ellipse with centre, semi-axes `(major, minor)` and major-axis angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Point2<f64>,
    pub semi_axes: Vector2<f64>,
    pub angle: f64,
}

impl Ellipse {
    pub fn new(center: Point2<f64>, semi_axes: Vector2<f64>, angle: f64) -> Result<Self> {
        if !(semi_axes.x > 0.0 && semi_axes.y > 0.0)
            || !semi_axes.iter().all(|v| v.is_finite())
            || !center.coords.iter().all(|v| v.is_finite())
            || !angle.is_finite()
        {
            return Err(Error::NonEllipse(format!(
                "semi-axes must be positive and finite: {:?}",
                semi_axes.as_slice()
            )));
        }
        Ok(Self {
            center,
            semi_axes,
            angle,
        })
    }

    /// Builds from the shape matrix `M` of `(x-c)ᵀ M⁻¹ (x-c) = 1`.
    pub fn from_shape(center: Point2<f64>, shape: Matrix2<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(shape);
        let (i_max, i_min) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let (l_max, l_min) = (eig.eigenvalues[i_max], eig.eigenvalues[i_min]);
        if !(l_min > 0.0) {
            return Err(Error::NonEllipse(format!(
                "shape matrix not positive definite: eigenvalues ({l_max}, {l_min})"
            )));
        }
        let v = eig.eigenvectors.column(i_max);
        Self::new(
            center,
            Vector2::new(l_max.sqrt(), l_min.sqrt()),
            v[1].atan2(v[0]),
        )
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `M = R diag(a², b²) Rᵀ`.
    pub fn shape(&self) -> Matrix2<f64> {
        let r = self.rotation();
        let d = Matrix2::from_diagonal(&self.semi_axes.component_mul(&self.semi_axes));
        r * d * r.transpose()
    }

    /// Gaussian covariance `R diag(a²/4, b²/4) Rᵀ` used by the distribution residual.
    pub fn covariance(&self) -> Matrix2<f64> {
        self.shape() / 4.0
    }

    pub fn dual_conic(&self) -> DualConic {
        let c = self.center.coords;
        let m = self.shape() - c * c.transpose();
        let dc = Matrix3::new(
            m[(0, 0)],
            m[(0, 1)],
            -c.x,
            m[(1, 0)],
            m[(1, 1)],
            -c.y,
            -c.x,
            -c.y,
            -1.0,
        );
        DualConic::new(dc).expect("finite ellipse yields a valid dual conic")
    }

    pub fn point_at(&self, t: f64) -> Point2<f64> {
        let local = Vector2::new(self.semi_axes.x * t.cos(), self.semi_axes.y * t.sin());
        self.center + self.rotation() * local
    }

    /// Tangent line at parameter `t`, oriented positive towards the centre.
    pub fn tangent_at(&self, t: f64) -> Line2 {
        let p = self.point_at(t);
        let d =
            self.rotation() * Vector2::new(-self.semi_axes.x * t.sin(), self.semi_axes.y * t.cos());
        let l = Line2::through(&p, &(p + d)).expect("non-degenerate tangent");
        if l.eval(&self.center) < 0.0 {
            Line2::new(-l.coeffs()).expect("non-degenerate tangent")
        } else {
            l
        }
    }

    /// Counter-clockwise inscribed polygon with `n` vertices at uniform parameter steps.
    pub fn polygon(&self, n: usize) -> Vec<Point2<f64>> {
        (0..n)
            .map(|i| self.point_at(2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect()
    }

    /// Negative inside, zero on the boundary.
    pub fn implicit(&self, p: &Point2<f64>) -> f64 {
        let local = self.rotation().transpose() * (p - self.center);
        (local.x / self.semi_axes.x).powi(2) + (local.y / self.semi_axes.y).powi(2) - 1.0
    }

    /// Axis-aligned bounding box `(x_min, y_min, x_max, y_max)`.
    pub fn bbox(&self) -> [f64; 4] {
        let m = self.shape();
        let hx = m[(0, 0)].sqrt();
        let hy = m[(1, 1)].sqrt();
        [
            self.center.x - hx,
            self.center.y - hy,
            self.center.x + hx,
            self.center.y + hy,
        ]
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.semi_axes.x * self.semi_axes.y
    }
}

/// Classical adjugate (transpose of the cofactor matrix).
pub fn adjugate(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    Matrix3::new(
        c(1, 2, 1, 2),
        -c(0, 2, 1, 2),
        c(0, 1, 1, 2),
        -c(1, 2, 0, 2),
        c(0, 2, 0, 2),
        -c(0, 1, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 0, 1),
        c(0, 1, 0, 1),
    )
}

/// Directional derivative of [`adjugate`]; exact because the adjugate of a 3×3 matrix
/// is a quadratic form in its entries.
pub(crate) fn adjugate_derivative(m: &Matrix3<f64>, dm: &Matrix3<f64>) -> Matrix3<f64> {
    adjugate(&(m + dm)) - adjugate(m) - adjugate(dm)
}
