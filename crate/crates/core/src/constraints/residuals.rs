use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Point2, Point3};

use crate::error::{Error, Result};
use crate::geometry::{adjugate, adjugate_derivative, DualConic};
use crate::geometry::{
    backproject_line, project_quadric, CameraView, DualQuadric, Ellipse, EllipsoidParams, Line2,
};
use crate::polygon::{polygon_iou, Polygon2D};

/// Number of local quadric parameters.
pub const QUADRIC_DOF: usize = 9;
/// Number of local pose parameters.
pub const POSE_DOF: usize = 6;
/// Vertices used when a projected conic is turned into a polygon.
pub const CONIC_POLYGON_VERTICES: usize = 64;
/// Central-difference step for the numerically differentiated residuals.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidualKind {
    PlaneAlgebraic,
    Overlap,
    Distribution,
    PointAlgebraic,
    PointReprojection,
}

/// One error term with its Jacobians with respect to the local quadric (9), pose (6)
/// and, for reprojection terms, point (3) parameters.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub kind: ResidualKind,
    pub values: DVector<f64>,
    pub jacobian_quadric: Option<DMatrix<f64>>,
    pub jacobian_pose: DMatrix<f64>,
    pub jacobian_point: Option<DMatrix<f64>>,
}

impl ResidualBlock {
    pub fn new(
        kind: ResidualKind,
        values: DVector<f64>,
        jacobian_quadric: Option<DMatrix<f64>>,
        jacobian_pose: DMatrix<f64>,
        jacobian_point: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = values.len();
        let check = |m: &DMatrix<f64>, cols: usize, what: &str| -> Result<()> {
            if m.nrows() != n || m.ncols() != cols {
                return Err(Error::InvalidParameter(format!(
                    "{what} jacobian is {}x{}, expected {n}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{what} jacobian")));
            }
            Ok(())
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residual values".into()));
        }
        check(&jacobian_pose, POSE_DOF, "pose")?;
        if let Some(j) = &jacobian_quadric {
            check(j, QUADRIC_DOF, "quadric")?;
        }
        if let Some(j) = &jacobian_point {
            check(j, 3, "point")?;
        }
        Ok(Self {
            kind,
            values,
            jacobian_quadric,
            jacobian_pose,
            jacobian_point,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sum of absolute residual values.
    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

fn ensure_in_front(q: &EllipsoidParams, cam: &CameraView) -> Result<()> {
    let depth = cam.depth(&Point3::from(q.center));
    if depth > 0.0 {
        Ok(())
    } else {
        Err(Error::BehindCamera { depth })
    }
}

/// `π̂ᵢᵀ Q̂* π̂ᵢ` per line, with planes and quadric normalized as in the constraint.
pub fn plane_algebraic_values(
    q: &DualQuadric,
    cam: &CameraView,
    lines: &[Line2],
) -> Result<Vec<f64>> {
    let center = q
        .center()
        .ok_or_else(|| Error::DegenerateQuadric("quadric has no finite centre".into()))?;
    let depth = cam.depth(&center);
    if !(depth > 0.0) {
        return Err(Error::BehindCamera { depth });
    }
    lines
        .iter()
        .map(|l| Ok(q.plane_form(backproject_line(l, cam)?.coeffs())))
        .collect()
}

/// Signed plane-algebraic residuals `rᵢ = π̂ᵢᵀ Q̂* π̂ᵢ`, `π̂ᵢ = Hᵀlᵢ / ‖(Hᵀlᵢ)₁..₃‖`.
pub fn plane_algebraic_residual(
    q: &EllipsoidParams,
    cam: &CameraView,
    lines: &[Line2],
) -> Result<ResidualBlock> {
    ensure_in_front(q, cam)?;
    let dual = q.dual();
    let qm = dual.matrix();
    let dq = q.dual_derivatives();
    let h = cam.projection();
    let dh = cam.projection_derivatives();

    let n = lines.len();
    let mut values = DVector::zeros(n);
    let mut jq = DMatrix::zeros(n, QUADRIC_DOF);
    let mut jp = DMatrix::zeros(n, POSE_DOF);
    for (i, l) in lines.iter().enumerate() {
        let p = h.transpose() * l.coeffs();
        let norm = p.xyz().norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidLine(
                "line backprojects to a degenerate plane".into(),
            ));
        }
        let pi = p / norm;
        let qpi = qm * pi;
        let r = pi.dot(&qpi);
        values[i] = r;
        for (k, d) in dq.iter().enumerate() {
            jq[(i, k)] = pi.dot(&(d * pi));
        }
        for (k, d) in dh.iter().enumerate() {
            let dp = d.transpose() * l.coeffs();
            jp[(i, k)] = 2.0 * (qpi.dot(&dp) - r * pi.xyz().dot(&dp.xyz())) / norm;
        }
    }
    ResidualBlock::new(ResidualKind::PlaneAlgebraic, values, Some(jq), jp, None)
}

/// Algebraic point-on-conic residuals `rⱼ = x̃ⱼᵀ Ĉ x̃ⱼ` against the normalized adjoint of
/// the projected dual conic.
pub fn point_algebraic_residual(
    q: &EllipsoidParams,
    cam: &CameraView,
    points: &[Point2<f64>],
) -> Result<ResidualBlock> {
    ensure_in_front(q, cam)?;
    let dual = q.dual();
    let qm = dual.matrix();
    let h = cam.projection();
    let c_raw = h * qm * h.transpose();
    DualConic::new(c_raw)?.to_ellipse()?;
    let adj = adjugate(&c_raw);
    let sign = if adj[(0, 0)] + adj[(1, 1)] < 0.0 {
        -1.0
    } else {
        1.0
    };
    let a = adj * sign;
    let a_norm = a.norm();
    if !(a_norm > 0.0) {
        return Err(Error::DegenerateQuadric(
            "projected conic is not invertible".into(),
        ));
    }
    let a_hat = a / a_norm;

    let d_hat = |dc: &Matrix3<f64>| -> Matrix3<f64> {
        let da = adjugate_derivative(&c_raw, dc) * sign;
        da / a_norm - a_hat * (a_hat.dot(&da) / a_norm)
    };
    let dq = q.dual_derivatives();
    let dh = cam.projection_derivatives();
    let dq_hat: Vec<Matrix3<f64>> = dq.iter().map(|d| d_hat(&(h * d * h.transpose()))).collect();
    let dp_hat: Vec<Matrix3<f64>> = dh
        .iter()
        .map(|d| {
            let x = d * qm * h.transpose();
            d_hat(&(x + x.transpose()))
        })
        .collect();

    let n = points.len();
    let mut values = DVector::zeros(n);
    let mut jq = DMatrix::zeros(n, QUADRIC_DOF);
    let mut jp = DMatrix::zeros(n, POSE_DOF);
    for (j, p) in points.iter().enumerate() {
        let x = p.to_homogeneous();
        values[j] = x.dot(&(a_hat * x));
        for (k, d) in dq_hat.iter().enumerate() {
            jq[(j, k)] = x.dot(&(d * x));
        }
        for (k, d) in dp_hat.iter().enumerate() {
            jp[(j, k)] = x.dot(&(d * x));
        }
    }
    ResidualBlock::new(ResidualKind::PointAlgebraic, values, Some(jq), jp, None)
}

/// Pixel reprojection error `project(X) − observed`.
pub fn point_reprojection_residual(
    point: &Point3<f64>,
    cam: &CameraView,
    pixel: &Point2<f64>,
) -> Result<ResidualBlock> {
    let pc = cam.pose.transform_point(point).coords;
    if !(pc.z > 0.0) {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let proj = cam.project_camera_point(&pc);
    let jproj = cam.projection_jacobian(&pc);
    let r = cam.pose.rotation.to_rotation_matrix();
    let mut jpose = DMatrix::zeros(2, POSE_DOF);
    jpose.view_mut((0, 0), (2, 3)).copy_from(&jproj);
    jpose
        .view_mut((0, 3), (2, 3))
        .copy_from(&(jproj * -crate::geometry::skew(&pc)));
    let jpoint = DMatrix::from_iterator(2, 3, (jproj * r.matrix()).iter().copied());
    ResidualBlock::new(
        ResidualKind::PointReprojection,
        DVector::from_column_slice((proj - pixel).as_slice()),
        None,
        jpose,
        Some(jpoint),
    )
}

/// Projected ellipse of a constrained quadric.
pub fn projected_ellipse(q: &EllipsoidParams, cam: &CameraView) -> Result<Ellipse> {
    project_quadric(&q.dual(), cam)?.to_ellipse()
}

/// Central-difference Jacobians of a scalar or vector residual function.
/// Variables a finite-difference Jacobian is taken with respect to.
/// Blocks of the skipped variable are left zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Quadric,
    Pose,
    Both,
}

fn numeric_block(
    kind: ResidualKind,
    q: &EllipsoidParams,
    cam: &CameraView,
    wrt: Wrt,
    f: impl Fn(&EllipsoidParams, &CameraView) -> Result<DVector<f64>>,
) -> Result<ResidualBlock> {
    let values = f(q, cam)?;
    let n = values.len();
    let mut jq = DMatrix::zeros(n, QUADRIC_DOF);
    let mut jp = DMatrix::zeros(n, POSE_DOF);
    let nq = if wrt == Wrt::Pose { 0 } else { QUADRIC_DOF };
    let np = if wrt == Wrt::Quadric { 0 } else { POSE_DOF };
    for k in 0..nq {
        let mut d = [0.0; QUADRIC_DOF];
        d[k] = FD_STEP;
        let plus = f(&q.retract(&d), cam)?;
        d[k] = -FD_STEP;
        let minus = f(&q.retract(&d), cam)?;
        jq.set_column(k, &((plus - minus) / (2.0 * FD_STEP)));
    }
    for k in 0..np {
        let mut d = [0.0; POSE_DOF];
        d[k] = FD_STEP;
        let plus = f(q, &cam.retract(&d))?;
        d[k] = -FD_STEP;
        let minus = f(q, &cam.retract(&d))?;
        jp.set_column(k, &((plus - minus) / (2.0 * FD_STEP)));
    }
    ResidualBlock::new(kind, values, Some(jq), jp, None)
}

/// `1 − IoU` between the polygonized projected conic and an observed region.
pub fn overlap_value(q: &EllipsoidParams, cam: &CameraView, region: &Polygon2D) -> Result<f64> {
    let e = projected_ellipse(q, cam)?;
    let conic = Polygon2D::from_convex(e.polygon(CONIC_POLYGON_VERTICES))?;
    Ok(1.0 - polygon_iou(&conic, region)?)
}

/// Scalar overlap residual with finite-difference Jacobians.
pub fn overlap_residual(
    q: &EllipsoidParams,
    cam: &CameraView,
    region: &Polygon2D,
) -> Result<ResidualBlock> {
    overlap_residual_wrt(q, cam, region, Wrt::Both)
}

pub(crate) fn overlap_residual_wrt(
    q: &EllipsoidParams,
    cam: &CameraView,
    region: &Polygon2D,
    wrt: Wrt,
) -> Result<ResidualBlock> {
    numeric_block(ResidualKind::Overlap, q, cam, wrt, |q, c| {
        Ok(DVector::from_element(1, overlap_value(q, c, region)?))
    })
}

fn sqrt_det_2x2(m: &Matrix2<f64>) -> f64 {
    m.determinant().max(0.0).sqrt()
}

/// Squared 2-Wasserstein distance between the Gaussians of two ellipses.
///
/// Uses `tr (A^½ B A^½)^½ = sqrt(tr(AB) + 2 sqrt(det A det B))` for 2×2 SPD matrices.
pub fn wasserstein2(observed: &Ellipse, predicted: &Ellipse) -> f64 {
    let sz = observed.covariance();
    let sc = predicted.covariance();
    let dmu = (observed.center - predicted.center).norm_squared();
    let cross = ((sz * sc).trace() + 2.0 * sqrt_det_2x2(&sz) * sqrt_det_2x2(&sc))
        .max(0.0)
        .sqrt();
    (dmu + sz.trace() + sc.trace() - 2.0 * cross).max(0.0)
}

/// Distribution residual against an observed ellipse, finite-difference Jacobians.
pub fn distribution_residual(
    q: &EllipsoidParams,
    cam: &CameraView,
    observed: &Ellipse,
) -> Result<ResidualBlock> {
    distribution_residual_wrt(q, cam, observed, Wrt::Both)
}

pub(crate) fn distribution_residual_wrt(
    q: &EllipsoidParams,
    cam: &CameraView,
    observed: &Ellipse,
    wrt: Wrt,
) -> Result<ResidualBlock> {
    numeric_block(ResidualKind::Distribution, q, cam, wrt, |q, c| {
        let e = projected_ellipse(q, c)?;
        Ok(DVector::from_element(1, wasserstein2(observed, &e)))
    })
}
