use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::skew;
use crate::error::{Error, Result};

/// Constrained ellipsoid: centroid `t`, orientation `R` and semi-axes `s`.
///
/// The orientation is stored as a rotation matrix; [`EllipsoidParams::new`] builds it
/// from Z-Y-X Euler angles `θ = (roll, pitch, yaw)` with `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
///
/// Local increments used by the solvers are 9-vectors
/// `[δt (3), δω (3, left axis-angle), δ log s (3)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidParams {
    pub center: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub semi_axes: Vector3<f64>,
}

impl EllipsoidParams {
    pub fn new(
        center: Vector3<f64>,
        angles: Vector3<f64>,
        semi_axes: Vector3<f64>,
    ) -> Result<Self> {
        Self::from_rotation(
            center,
            Rotation3::from_euler_angles(angles.x, angles.y, angles.z),
            semi_axes,
        )
    }

    pub fn from_rotation(
        center: Vector3<f64>,
        rotation: Rotation3<f64>,
        semi_axes: Vector3<f64>,
    ) -> Result<Self> {
        if semi_axes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "semi-axes must be strictly positive, got {:?}",
                semi_axes.as_slice()
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("centre must be finite".into()));
        }
        Ok(Self {
            center,
            rotation,
            semi_axes,
        })
    }

    /// Z-Y-X Euler angles `(roll, pitch, yaw)`.
    pub fn angles(&self) -> Vector3<f64> {
        let (r, p, y) = self.rotation.euler_angles();
        Vector3::new(r, p, y)
    }

    /// `Z` of the constrained parameterization.
    pub fn transform(&self) -> Matrix4<f64> {
        let mut z = Matrix4::identity();
        z.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        z.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center);
        z
    }

    fn canonical(&self) -> Matrix4<f64> {
        let s2 = self.semi_axes.component_mul(&self.semi_axes);
        Matrix4::from_diagonal(&nalgebra::Vector4::new(s2.x, s2.y, s2.z, -1.0))
    }

    /// `Q* = Z·Q̆*·Zᵀ`.
    pub fn dual(&self) -> DualQuadric {
        let z = self.transform();
        DualQuadric::from_symmetric(z * self.canonical() * z.transpose())
    }

    /// Derivatives of the (unnormalized) dual matrix with respect to the 9 local
    /// increments, evaluated at zero increment.
    pub fn dual_derivatives(&self) -> [Matrix4<f64>; 9] {
        let z = self.transform();
        let d = self.canonical();
        let mut out = [Matrix4::zeros(); 9];
        for k in 0..3 {
            let mut dz = Matrix4::zeros();
            dz[(k, 3)] = 1.0;
            let a = dz * d * z.transpose();
            out[k] = a + a.transpose();

            let mut dz = Matrix4::zeros();
            let axis = Vector3::ith(k, 1.0);
            dz.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(skew(&axis) * self.rotation.matrix()));
            let a = dz * d * z.transpose();
            out[3 + k] = a + a.transpose();

            let mut dd = Matrix4::zeros();
            dd[(k, k)] = 2.0 * self.semi_axes[k] * self.semi_axes[k];
            out[6 + k] = z * dd * z.transpose();
        }
        out
    }

    /// Applies a local 9-vector increment.
    pub fn retract(&self, delta: &[f64]) -> Self {
        debug_assert_eq!(delta.len(), 9);
        let dt = Vector3::new(delta[0], delta[1], delta[2]);
        let dw = Vector3::new(delta[3], delta[4], delta[5]);
        let ds = Vector3::new(delta[6].exp(), delta[7].exp(), delta[8].exp());
        Self {
            center: self.center + dt,
            rotation: Rotation3::new(dw) * self.rotation,
            semi_axes: self.semi_axes.component_mul(&ds),
        }
    }

    /// Expresses the ellipsoid in a new frame: `x' = T x`.
    pub fn transformed(&self, t: &Isometry3<f64>) -> Self {
        Self {
            center: t.transform_point(&Point3::from(self.center)).coords,
            rotation: t.rotation.to_rotation_matrix() * self.rotation,
            semi_axes: self.semi_axes,
        }
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.product()
    }

    /// Signed implicit value `(x-t)ᵀ R S⁻² Rᵀ (x-t) - 1`; negative inside.
    pub fn implicit(&self, p: &Point3<f64>) -> f64 {
        let local = self.rotation.inverse() * (p.coords - self.center);
        local.component_div(&self.semi_axes).norm_squared() - 1.0
    }

    /// Surface point for spherical angles `(polar, azimuth)`.
    pub fn surface_point(&self, polar: f64, azimuth: f64) -> Point3<f64> {
        let unit = Vector3::new(
            polar.sin() * azimuth.cos(),
            polar.sin() * azimuth.sin(),
            polar.cos(),
        );
        Point3::from(self.center + self.rotation * unit.component_mul(&self.semi_axes))
    }
}

/// Symmetric 4×4 dual quadric `Q*`, normalized so that entry (4,4) is −1 when it is
/// non-zero and to unit Frobenius norm otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualQuadric {
    m: Matrix4<f64>,
}

impl DualQuadric {
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dual quadric".into()));
        }
        if m.norm() == 0.0 {
            return Err(Error::DegenerateQuadric("zero matrix".into()));
        }
        Ok(Self::from_symmetric(m))
    }

    fn from_symmetric(m: Matrix4<f64>) -> Self {
        let sym = (m + m.transpose()) * 0.5;
        let scale = sym.norm();
        let corner = sym[(3, 3)];
        let m = if corner.abs() > 1e-12 * scale {
            let mut n = sym / (-corner);
            n[(3, 3)] = -1.0;
            n
        } else {
            sym / scale
        };
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    /// Centroid `Q[0..3, 3] / Q[3, 3]`; `None` when the corner entry vanishes.
    pub fn center(&self) -> Option<Point3<f64>> {
        let w = self.m[(3, 3)];
        if w == 0.0 {
            return None;
        }
        Some(Point3::from(
            self.m.fixed_view::<3, 1>(0, 3).into_owned() / w,
        ))
    }

    /// `πᵀ Q* π`.
    pub fn plane_form(&self, pi: &nalgebra::Vector4<f64>) -> f64 {
        pi.dot(&(self.m * pi))
    }

    /// Inverse of [`EllipsoidParams::dual`] by eigendecomposition of the centred block.
    ///
    /// Axes come out in descending order; equal axes are ordered by lexicographic
    /// comparison of their eigenvectors, and the last column is flipped to make
    /// `det R = +1`.
    pub fn to_params(&self) -> Result<EllipsoidParams> {
        let center = self
            .center()
            .ok_or_else(|| Error::DegenerateQuadric("entry (4,4) vanishes".into()))?
            .coords;
        // After normalization Q[3,3] = -1, so the centred block is Q₃ + t tᵀ.
        let block: Matrix3<f64> =
            self.m.fixed_view::<3, 3>(0, 0).into_owned() + center * center.transpose();
        let eig = SymmetricEigen::new((block + block.transpose()) * 0.5);
        let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        if eig.eigenvalues.iter().any(|&l| !(l > 1e-14 * scale)) {
            return Err(Error::DegenerateQuadric(format!(
                "centred block is not positive definite: eigenvalues {:?}",
                eig.eigenvalues.as_slice()
            )));
        }

        let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
            .map(|i| {
                let mut v = eig.eigenvectors.column(i).into_owned();
                let lead = v.iamax();
                if v[lead] < 0.0 {
                    v = -v;
                }
                (eig.eigenvalues[i], v)
            })
            .collect();
        pairs.sort_by(|a, b| {
            let tie = 1e-12 * scale;
            if (a.0 - b.0).abs() <= tie {
                lexicographic(&b.1, &a.1)
            } else {
                b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal)
            }
        });

        let mut r = Matrix3::from_columns(&[pairs[0].1, pairs[1].1, pairs[2].1]);
        if r.determinant() < 0.0 {
            let c = -r.column(2);
            r.set_column(2, &c);
        }
        let axes = Vector3::new(pairs[0].0.sqrt(), pairs[1].0.sqrt(), pairs[2].0.sqrt());
        EllipsoidParams::from_rotation(center, Rotation3::from_matrix_unchecked(r), axes)
    }
}

fn lexicographic(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    for i in 0..3 {
        match a[i].partial_cmp(&b[i]) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}
