use nalgebra::DVector;

use super::lm::{lm_solve, Factor, LMConfig, Problem, Variable};
use crate::constraints::{ConstraintSpec, Measurement, Wrt};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, EllipsoidParams};
use crate::hull::{hull_edges, HullPolygon};
use crate::par;

/// One view of an object: camera and the prepared measurement.
#[derive(Clone, Debug)]
pub struct ObjectView {
    pub camera: CameraView,
    pub measurement: Measurement,
}

#[derive(Clone, Debug)]
pub struct ObjectFit {
    pub params: EllipsoidParams,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Views whose residual could not be evaluated at the initial estimate.
    pub dropped_views: usize,
}

struct ObjectProblem<'a> {
    views: Vec<&'a ObjectView>,
    spec: &'a ConstraintSpec,
}

impl Problem for ObjectProblem<'_> {
    type State = EllipsoidParams;

    fn variables(&self) -> Vec<Variable> {
        vec![Variable {
            dim: 9,
            eliminate: false,
        }]
    }

    fn linearize(&self, q: &EllipsoidParams) -> Result<Vec<Factor>> {
        let blocks = par::map(&self.views, |v| {
            self.spec
                .residual_wrt(&v.measurement, q, &v.camera, Wrt::Quadric)
        });
        Ok(blocks
            .into_iter()
            .filter_map(|b| b.ok())
            .map(|b| Factor {
                residual: b.values,
                jacobians: vec![(
                    0,
                    b.jacobian_quadric
                        .expect("object terms carry quadric jacobians"),
                )],
            })
            .collect())
    }

    fn cost(&self, q: &EllipsoidParams) -> Result<f64> {
        let vals = par::map(&self.views, |v| {
            self.spec.values(&v.measurement, q, &v.camera)
        });
        let mut c = 0.0;
        for v in vals {
            c += 0.5 * v?.norm_squared();
        }
        Ok(c)
    }

    fn retract(&self, q: &EllipsoidParams, dx: &DVector<f64>) -> EllipsoidParams {
        q.retract(dx.as_slice())
    }
}

/// Refines one quadric against its multi-view observations, poses fixed.
pub fn reconstruct_object(
    views: &[ObjectView],
    spec: &ConstraintSpec,
    init: &EllipsoidParams,
    cfg: &LMConfig,
    min_views: usize,
) -> Result<ObjectFit> {
    if views.len() < min_views.max(1) {
        return Err(Error::InsufficientObservations {
            needed: min_views.max(1),
            got: views.len(),
        });
    }
    let usable: Vec<&ObjectView> = views
        .iter()
        .filter(|v| spec.values(&v.measurement, init, &v.camera).is_ok())
        .collect();
    let dropped_views = views.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::InsufficientObservations {
            needed: min_views.max(1),
            got: 0,
        });
    }
    let problem = ObjectProblem {
        views: usable,
        spec,
    };
    let report = lm_solve(&problem, *init, cfg)?;
    Ok(ObjectFit {
        params: report.state,
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        iterations: report.iterations,
        dropped_views,
    })
}

/// Plane-algebraic reconstruction from hull observations.
pub fn reconstruct_from_hulls(
    views: &[(CameraView, HullPolygon)],
    init: &EllipsoidParams,
    cfg: &LMConfig,
    min_views: usize,
) -> Result<ObjectFit> {
    let views: Vec<ObjectView> = views
        .iter()
        .map(|(c, h)| ObjectView {
            camera: *c,
            measurement: Measurement::Lines(hull_edges(h)),
        })
        .collect();
    reconstruct_object(
        &views,
        &ConstraintSpec::hull_plane(0.0, 0),
        init,
        cfg,
        min_views,
    )
}
