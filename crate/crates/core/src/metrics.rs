//! Evaluation metrics: silhouette IoU, mean tangent distance and trajectory error.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::constraints::{plane_algebraic_values, CONIC_POLYGON_VERTICES};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, DualConic, DualQuadric, Line2};
use crate::hull::Contour2D;
use crate::polygon::{clip_convex, polygon_area, Polygon2D};

/// Maximum timestamp difference for a pose pair to count as matched, seconds.
pub const MATCH_WINDOW: f64 = 0.02;

/// IoU between the 64-gon of a projected conic and a (possibly concave) contour.
pub fn siou(conic: &DualConic, contour: &Contour2D) -> Result<f64> {
    let ellipse = conic.to_ellipse()?;
    let cpoly = Polygon2D::from_convex(ellipse.polygon(CONIC_POLYGON_VERTICES))?;
    let spoly = Polygon2D::new(contour.points().to_vec())?;
    let inter = clip_convex(spoly.vertices(), cpoly.vertices());
    let ia = if inter.len() >= 3 {
        polygon_area(&inter)?.max(0.0)
    } else {
        0.0
    };
    let union = cpoly.area() + spoly.area() - ia;
    Ok(if union > 0.0 {
        (ia / union).clamp(0.0, 1.0)
    } else {
        0.0
    })
}

/// One observation for the tangent-distance metric.
#[derive(Clone, Debug)]
pub struct TangentObservation<'a> {
    pub quadric: &'a DualQuadric,
    pub camera: &'a CameraView,
    pub lines: &'a [Line2],
}

/// Mean of `|π̂ᵀQ̂*π̂|` over every edge of every observation.
pub fn mtd(observations: &[TangentObservation<'_>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for o in observations {
        for v in plane_algebraic_values(o.quadric, o.camera, o.lines)? {
            sum += v.abs();
        }
        count += o.lines.len();
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no edges to average".into()));
    }
    Ok(sum / count as f64)
}

/// Timestamped camera-to-world poses.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Isometry3<f64>>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<Isometry3<f64>>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::Validation("timestamp and pose counts differ".into()));
        }
        for (i, w) in stamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at entry {}: {} then {}",
                    i + 2,
                    w[0],
                    w[1]
                )));
            }
        }
        if stamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("non-finite timestamp".into()));
        }
        Ok(Self { stamps, poses })
    }

    /// From world-to-camera poses.
    pub fn from_world_to_camera(stamps: Vec<f64>, poses: &[Isometry3<f64>]) -> Result<Self> {
        Self::new(stamps, poses.iter().map(|p| p.inverse()).collect())
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Isometry3<f64>] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.poses
            .iter()
            .map(|p| Point3::from(p.translation.vector))
            .collect()
    }

    /// Applies `x ↦ s·R x + t` to every camera position and `R` to every orientation.
    pub fn transformed(&self, s: f64, r: &UnitQuaternion<f64>, t: &Vector3<f64>) -> Self {
        let poses = self
            .poses
            .iter()
            .map(|p| {
                Isometry3::from_parts(
                    Translation3::from(r * p.translation.vector * s + t),
                    r * p.rotation,
                )
            })
            .collect();
        Self {
            stamps: self.stamps.clone(),
            poses,
        }
    }

    /// Index of the pose closest to `t` within [`MATCH_WINDOW`].
    pub fn nearest(&self, t: f64) -> Option<usize> {
        let i = self.stamps.partition_point(|s| *s < t);
        let mut best: Option<usize> = None;
        for j in [i.wrapping_sub(1), i] {
            if j < self.stamps.len() {
                let d = (self.stamps[j] - t).abs();
                if d <= MATCH_WINDOW && best.is_none_or(|b| d < (self.stamps[b] - t).abs()) {
                    best = Some(j);
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    Se3,
    Sim3,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se3" => Ok(Self::Se3),
            "sim3" => Ok(Self::Sim3),
            _ => Err(Error::Config(format!("unknown alignment mode '{s}'"))),
        }
    }
}

/// Similarity `dst ≈ s R src + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

/// Closed-form least-squares alignment of corresponding point sets.
pub fn umeyama(src: &[Point3<f64>], dst: &[Point3<f64>], with_scale: bool) -> Result<Alignment> {
    let n = src.len();
    if n != dst.len() || n < 3 {
        return Err(Error::InsufficientMatches {
            needed: 3,
            got: n.min(dst.len()),
        });
    }
    let nf = n as f64;
    let ms = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;
    let md = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s.coords - ms, d.coords - md);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= nf;
    var_s /= nf;
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sgn = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        sgn[(2, 2)] = -1.0;
    }
    let r = u * sgn * vt;
    let scale = if with_scale {
        if !(var_s > 0.0) {
            return Err(Error::UndefinedMetric("source points coincide".into()));
        }
        (Matrix3::from_diagonal(&svd.singular_values) * sgn).trace() / var_s
    } else {
        1.0
    };
    Ok(Alignment {
        rotation: Rotation3::from_matrix_unchecked(r),
        translation: md - r * ms * scale,
        scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    pub matches: usize,
    pub alignment: Alignment,
}

/// Translational RMSE after aligning `estimate` onto `ground_truth`.
pub fn ate_rmse(
    estimate: &Trajectory,
    ground_truth: &Trajectory,
    mode: AlignMode,
) -> Result<AteResult> {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (t, p) in estimate.stamps.iter().zip(&estimate.poses) {
        if let Some(j) = ground_truth.nearest(*t) {
            src.push(Point3::from(p.translation.vector));
            dst.push(Point3::from(ground_truth.poses[j].translation.vector));
        }
    }
    if src.len() < 3 {
        return Err(Error::InsufficientMatches {
            needed: 3,
            got: src.len(),
        });
    }
    let a = umeyama(&src, &dst, mode == AlignMode::Sim3)?;
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (a.rotation * s.coords * a.scale + a.translation - d.coords).norm_squared())
        .sum();
    Ok(AteResult {
        rmse: (sq / src.len() as f64).sqrt(),
        matches: src.len(),
        alignment: a,
    })
}
