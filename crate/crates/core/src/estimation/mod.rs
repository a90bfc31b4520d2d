//! Levenberg-Marquardt machinery and the object, pose and bundle-adjustment problems.

mod ba;
mod lm;
mod object;
mod pose;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{projected_ellipse, Observation};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, EllipsoidParams};
use crate::polygon::bbox_iou;

pub use ba::{
    ba_residuals, bundle_adjust, BAOptions, BAReport, BundleProblem, ObjectObservation,
    PointObservation,
};
pub use lm::{lm_solve, Factor, LMConfig, LMReport, Problem, Termination, Variable};
pub use object::{reconstruct_from_hulls, reconstruct_object, ObjectFit, ObjectView};
pub use pose::{joint_pose_estimate, PoseFit, PoseObject};

/// Whitening for point and object residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Pixel standard deviation of point observations.
    pub point_sigma: f64,
    /// Standard deviation of the object error term in its own units.
    pub object_sigma: f64,
    /// Relative depth standard deviation; `None` ignores measured point depths.
    #[serde(default)]
    pub depth_sigma: Option<f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            point_sigma: 1.0,
            object_sigma: 0.01,
            depth_sigma: None,
        }
    }
}

impl NoiseModel {
    pub fn new(point_sigma: f64, object_sigma: f64) -> Result<Self> {
        let n = Self {
            point_sigma,
            object_sigma,
            depth_sigma: None,
        };
        n.validate()?;
        Ok(n)
    }

    /// Adds a relative depth term for point observations that carry a depth.
    pub fn with_depth(mut self, depth_sigma: f64) -> Result<Self> {
        self.depth_sigma = Some(depth_sigma);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.point_sigma > 0.0 && self.object_sigma > 0.0)
            || !self.point_sigma.is_finite()
            || !self.object_sigma.is_finite()
        {
            return Err(Error::Config(format!(
                "noise sigmas must be positive, got {} and {}",
                self.point_sigma, self.object_sigma
            )));
        }
        if let Some(d) = self.depth_sigma {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!(
                    "depth sigma must be positive, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Poses (world-to-camera), points and quadric landmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub poses: Vec<Isometry3<f64>>,
    pub points: Vec<Point3<f64>>,
    pub quadrics: Vec<EllipsoidParams>,
    /// Quadric index per object observation, `None` for unassociated ones.
    pub associations: Vec<Option<usize>>,
}

impl MapState {
    pub fn validate(&self) -> Result<()> {
        for a in self.associations.iter().flatten() {
            if *a >= self.quadrics.len() {
                return Err(Error::Validation(format!(
                    "association {a} out of range for {} quadrics",
                    self.quadrics.len()
                )));
            }
        }
        for q in &self.quadrics {
            EllipsoidParams::from_rotation(q.center, q.rotation, q.semi_axes)?;
        }
        Ok(())
    }

    /// Applies the world change `x' = T x` to every element.
    pub fn transformed(&self, t: &Isometry3<f64>) -> Self {
        let inv = t.inverse();
        Self {
            poses: self.poses.iter().map(|p| p * inv).collect(),
            points: self.points.iter().map(|p| t * p).collect(),
            quadrics: self.quadrics.iter().map(|q| q.transformed(t)).collect(),
            associations: self.associations.clone(),
        }
    }
}

/// Oriented 3D box with rotation columns as box axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub half_extents: Vector3<f64>,
}

impl Obb {
    /// Principal-axis box enclosing `points`.
    pub fn from_points(points: &[Point3<f64>]) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InsufficientObservations {
                needed: 4,
                got: points.len(),
            });
        }
        let n = points.len() as f64;
        let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
        let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
            let d = p.coords - mean;
            a + d * d.transpose()
        }) / n;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut axes =
            Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
        if axes.determinant() < 0.0 {
            axes.set_column(2, &-axes.column(2));
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            let l = axes.transpose() * (p.coords - mean);
            lo = lo.inf(&l);
            hi = hi.sup(&l);
        }
        let half = (hi - lo) * 0.5;
        if !(half.min() > 0.0) {
            return Err(Error::InvalidParameter(
                "points span a degenerate box".into(),
            ));
        }
        Ok(Self {
            center: mean + axes * ((hi + lo) * 0.5),
            rotation: Rotation3::from_matrix_unchecked(axes),
            half_extents: half,
        })
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.product()
    }
}

/// Ellipsoid inscribed in the box: same centre and axes, semi-axes equal to half-extents.
pub fn init_quadric_from_obb(obb: &Obb) -> Result<EllipsoidParams> {
    EllipsoidParams::from_rotation(obb.center, obb.rotation, obb.half_extents)
}

/// Matches each observation to the quadric whose projected-conic bbox overlaps its bbox
/// most, if that IoU reaches `iou_threshold`.
pub fn associate(
    observations: &[Observation],
    quadrics: &[EllipsoidParams],
    cam: &CameraView,
    iou_threshold: f64,
) -> Vec<Option<(usize, f64)>> {
    let boxes: Vec<Option<[f64; 4]>> = quadrics
        .iter()
        .map(|q| projected_ellipse(q, cam).ok().map(|e| e.bbox()))
        .collect();
    observations
        .iter()
        .map(|o| {
            boxes
                .iter()
                .enumerate()
                .filter_map(|(i, b)| b.map(|b| (i, bbox_iou(&o.bbox, &b))))
                .filter(|(_, iou)| *iou >= iou_threshold)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        })
        .collect()
}

/// Huber weight for a whitened block norm `e` with threshold `k`.
pub(crate) fn huber_weight(e: f64, k: f64) -> f64 {
    if e <= k {
        1.0
    } else {
        k / e
    }
}

/// Huber loss `ρ(e)`; equals `e²/2` inside the threshold.
pub(crate) fn huber_cost(e: f64, k: f64) -> f64 {
    if e <= k {
        0.5 * e * e
    } else {
        k * e - 0.5 * k * k
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
