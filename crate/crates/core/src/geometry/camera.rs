use nalgebra::{Isometry3, Matrix2x3, Matrix3, Matrix3x4, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::skew;
use crate::error::{Error, Result};

/// Pinhole intrinsics without skew, in pixels. Pixel origin is the image top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub const fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite())
            || !self.cx.is_finite()
            || !self.cy.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "intrinsics need positive finite focal lengths: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Intrinsics plus a world-to-camera pose.
///
/// Local pose increments are 6-vectors `[ρ (3), φ (3)]` applied on the left:
/// `T ← Exp(ρ, φ)·T` with `Exp(ρ, φ) = (exp([φ]×), ρ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Isometry3<f64>,
}

impl CameraView {
    pub fn new(intrinsics: Intrinsics, pose: Isometry3<f64>) -> Result<Self> {
        intrinsics.validate()?;
        if pose.translation.vector.iter().any(|v| !v.is_finite())
            || pose.rotation.coords.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("camera pose".into()));
        }
        Ok(Self { intrinsics, pose })
    }

    /// `[R | t]`.
    pub fn extrinsic(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.pose.rotation.to_rotation_matrix().matrix());
        rt.set_column(3, &self.pose.translation.vector);
        rt
    }

    /// `H = K [R | t]`.
    pub fn projection(&self) -> Matrix3x4<f64> {
        self.intrinsics.matrix() * self.extrinsic()
    }

    /// Derivatives of `H` with respect to the 6 local pose increments.
    pub fn projection_derivatives(&self) -> [Matrix3x4<f64>; 6] {
        let k = self.intrinsics.matrix();
        let rt = self.extrinsic();
        let mut out = [Matrix3x4::zeros(); 6];
        for i in 0..3 {
            let mut d = Matrix3x4::zeros();
            d[(i, 3)] = 1.0;
            out[i] = k * d;
            out[3 + i] = k * skew(&Vector3::ith(i, 1.0)) * rt;
        }
        out
    }

    pub fn retract(&self, delta: &[f64]) -> Self {
        debug_assert_eq!(delta.len(), 6);
        let step = Isometry3::new(
            Vector3::new(delta[0], delta[1], delta[2]),
            Vector3::new(delta[3], delta[4], delta[5]),
        );
        Self {
            intrinsics: self.intrinsics,
            pose: step * self.pose,
        }
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.pose.inverse_transform_point(&Point3::origin())
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, p: &Point3<f64>) -> f64 {
        self.pose.transform_point(p).z
    }

    pub fn project_point(&self, p: &Point3<f64>) -> Result<Point2<f64>> {
        let pc = self.pose.transform_point(p);
        if !(pc.z > 0.0) {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        Ok(self.project_camera_point(&pc.coords))
    }

    pub(crate) fn project_camera_point(&self, pc: &Vector3<f64>) -> Point2<f64> {
        let k = &self.intrinsics;
        Point2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy)
    }

    /// Jacobian of the pixel with respect to the camera-frame point.
    pub(crate) fn projection_jacobian(&self, pc: &Vector3<f64>) -> Matrix2x3<f64> {
        let k = &self.intrinsics;
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * pc.x * iz2,
            0.0,
            k.fy * iz,
            -k.fy * pc.y * iz2,
        )
    }

    /// Back-projects a pixel with known depth to a world point.
    pub fn unproject(&self, px: &Point2<f64>, depth: f64) -> Point3<f64> {
        let k = &self.intrinsics;
        let pc = Point3::new(
            (px.x - k.cx) / k.fx * depth,
            (px.y - k.cy) / k.fy * depth,
            depth,
        );
        self.pose.inverse_transform_point(&pc)
    }

    /// Whether a pixel lies inside a `width × height` image.
    pub fn in_image(px: &Point2<f64>, width: f64, height: f64) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < width && px.y < height
    }
}
