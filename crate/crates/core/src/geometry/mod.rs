//! Homogeneous primitives, constrained ellipsoids, cameras and the projection laws
//! linking dual quadrics, planes and image lines to dual conics.

mod camera;
mod conic;
mod quadric;

pub use camera::{CameraView, Intrinsics};
pub(crate) use conic::adjugate_derivative;
pub use conic::{adjugate, DualConic, Ellipse};
pub use quadric::{DualQuadric, EllipsoidParams};

use nalgebra::{Matrix3, Point3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Homogeneous 3D point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomPoint3(Vector4<f64>);

impl HomPoint3 {
    pub fn new(coords: Vector4<f64>) -> Result<Self> {
        if coords.iter().all(|c| *c == 0.0) || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "homogeneous point must be finite and non-zero".into(),
            ));
        }
        Ok(Self(coords))
    }

    pub fn from_euclidean(p: &Point3<f64>) -> Self {
        Self(p.to_homogeneous())
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.0
    }

    /// `None` for points at infinity.
    pub fn euclidean(&self) -> Option<Point3<f64>> {
        Point3::from_homogeneous(self.0)
    }
}

/// Plane `(a, b, c, d)` with unit normal `(a, b, c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane3(Vector4<f64>);

impl Plane3 {
    /// Normalizes so that the normal has unit length. The sign is preserved.
    pub fn new(coeffs: Vector4<f64>) -> Result<Self> {
        let n = coeffs.xyz().norm();
        if !(n.is_finite() && n > 0.0) || !coeffs.w.is_finite() {
            return Err(Error::InvalidParameter(
                "plane normal must be non-zero".into(),
            ));
        }
        Ok(Self(coeffs / n))
    }

    pub fn coeffs(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.0.xyz()
    }

    pub fn eval(&self, p: &HomPoint3) -> f64 {
        self.0.dot(p.coords())
    }
}

/// Homogeneous image line `l` with `(l1, l2)` of unit length, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line2(Vector3<f64>);

impl Line2 {
    pub fn new(coeffs: Vector3<f64>) -> Result<Self> {
        let n = coeffs.xy().norm();
        if !(n.is_finite() && n > 0.0) || !coeffs.z.is_finite() {
            return Err(Error::InvalidLine(format!(
                "first two coefficients vanish: {:?}",
                coeffs.as_slice()
            )));
        }
        Ok(Self(coeffs / n))
    }

    /// Line through two pixels; positive on the left of `a -> b` in a y-up frame,
    /// i.e. positive on the interior side of a counter-clockwise polygon edge.
    pub fn through(a: &nalgebra::Point2<f64>, b: &nalgebra::Point2<f64>) -> Result<Self> {
        Self::new(a.to_homogeneous().cross(&b.to_homogeneous()))
    }

    pub fn coeffs(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Signed distance in pixels.
    pub fn eval(&self, p: &nalgebra::Point2<f64>) -> f64 {
        self.0.dot(&p.to_homogeneous())
    }
}

/// Backprojects an image line to the plane through the camera centre, `π = Hᵀ l`.
pub fn backproject_line(l: &Line2, cam: &CameraView) -> Result<Plane3> {
    Plane3::new(cam.projection().transpose() * l.coeffs())
}

/// Projects a dual quadric with `C* = H Q* Hᵀ`.
pub fn project_quadric(q: &DualQuadric, cam: &CameraView) -> Result<DualConic> {
    let center = q
        .center()
        .ok_or_else(|| Error::DegenerateQuadric("quadric has no finite centre".into()))?;
    let depth = cam.depth(&center);
    if !(depth > 0.0) {
        return Err(Error::BehindCamera { depth });
    }
    let h = cam.projection();
    DualConic::new(h * q.matrix() * h.transpose())
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
