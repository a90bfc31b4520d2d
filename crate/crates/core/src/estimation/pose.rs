use nalgebra::{DVector, Isometry3, Point2, Point3};

use super::lm::{lm_solve, Factor, LMConfig, Problem, Variable};
use super::NoiseModel;
use crate::constraints::{point_reprojection_residual, ConstraintSpec, Measurement, Wrt};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, EllipsoidParams};

/// A mapped quadric with its measurement in the current frame.
#[derive(Clone, Debug)]
pub struct PoseObject {
    pub quadric: EllipsoidParams,
    pub measurement: Measurement,
}

#[derive(Clone, Debug)]
pub struct PoseFit {
    pub pose: Isometry3<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

struct PoseProblem<'a> {
    points: Vec<&'a (Point3<f64>, Point2<f64>)>,
    objects: Vec<&'a PoseObject>,
    spec: &'a ConstraintSpec,
    noise: NoiseModel,
}

impl Problem for PoseProblem<'_> {
    type State = CameraView;

    fn variables(&self) -> Vec<Variable> {
        vec![Variable {
            dim: 6,
            eliminate: false,
        }]
    }

    fn linearize(&self, cam: &CameraView) -> Result<Vec<Factor>> {
        let mut out = Vec::with_capacity(self.points.len() + self.objects.len());
        let wp = 1.0 / self.noise.point_sigma;
        for (x, px) in &self.points {
            if let Ok(b) = point_reprojection_residual(x, cam, px) {
                out.push(Factor {
                    residual: b.values * wp,
                    jacobians: vec![(0, b.jacobian_pose * wp)],
                });
            }
        }
        let wo = 1.0 / self.noise.object_sigma;
        for o in &self.objects {
            if let Ok(b) = self
                .spec
                .residual_wrt(&o.measurement, &o.quadric, cam, Wrt::Pose)
            {
                out.push(Factor {
                    residual: b.values * wo,
                    jacobians: vec![(0, b.jacobian_pose * wo)],
                });
            }
        }
        Ok(out)
    }

    fn cost(&self, cam: &CameraView) -> Result<f64> {
        let mut c = 0.0;
        for (x, px) in &self.points {
            let r = cam.project_point(x)? - *px;
            c += 0.5 * r.norm_squared() / self.noise.point_sigma.powi(2);
        }
        for o in &self.objects {
            let v = self.spec.values(&o.measurement, &o.quadric, cam)?;
            c += 0.5 * v.norm_squared() / self.noise.object_sigma.powi(2);
        }
        Ok(c)
    }

    fn retract(&self, cam: &CameraView, dx: &DVector<f64>) -> CameraView {
        cam.retract(dx.as_slice())
    }
}

/// Refines one camera pose from fixed points and quadrics.
pub fn joint_pose_estimate(
    init: &CameraView,
    points: &[(Point3<f64>, Point2<f64>)],
    objects: &[PoseObject],
    spec: &ConstraintSpec,
    noise: &NoiseModel,
    cfg: &LMConfig,
) -> Result<PoseFit> {
    noise.validate()?;
    let points: Vec<_> = points.iter().filter(|(x, _)| init.depth(x) > 0.0).collect();
    let objects: Vec<_> = objects
        .iter()
        .filter(|o| spec.values(&o.measurement, &o.quadric, init).is_ok())
        .collect();
    let object_rows: usize = objects
        .iter()
        .map(|o| match &o.measurement {
            Measurement::Lines(l) => l.len(),
            Measurement::Points(p) => p.len(),
            _ => 1,
        })
        .sum();
    if points.len() < 3 && !(objects.len() >= 2 && object_rows >= 6) {
        return Err(Error::Underconstrained(format!(
            "{} points and {} objects ({object_rows} rows) cannot fix a pose",
            points.len(),
            objects.len()
        )));
    }
    let problem = PoseProblem {
        points,
        objects,
        spec,
        noise: *noise,
    };
    let report = lm_solve(&problem, *init, cfg)?;
    Ok(PoseFit {
        pose: report.state.pose,
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        iterations: report.iterations,
    })
}
