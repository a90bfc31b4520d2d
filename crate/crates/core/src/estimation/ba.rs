use nalgebra::{DMatrix, DVector, Point2, Vector3};

use super::lm::{lm_solve, Factor, LMConfig, Problem, Variable};
use super::{huber_cost, huber_weight, median, MapState, NoiseModel};
use crate::constraints::{point_reprojection_residual, ConstraintSpec, Measurement};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, Intrinsics};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointObservation {
    pub frame: usize,
    pub point: usize,
    pub pixel: Point2<f64>,
    /// Measured depth along the optical axis, if the sensor provides one.
    pub depth: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ObjectObservation {
    pub frame: usize,
    pub quadric: usize,
    pub measurement: Measurement,
}

/// Which variables are held constant and whether the Huber kernel is used.
#[derive(Clone, Debug, PartialEq)]
pub struct BAOptions {
    pub fixed_poses: Vec<bool>,
    pub fixed_points: Vec<bool>,
    pub fixed_quadrics: Vec<bool>,
    pub robust: bool,
}

impl BAOptions {
    /// First pose fixed, everything else free, Huber enabled.
    pub fn standard(state: &MapState) -> Self {
        let mut fixed_poses = vec![false; state.poses.len()];
        if let Some(f) = fixed_poses.first_mut() {
            *f = true;
        }
        Self {
            fixed_poses,
            fixed_points: vec![false; state.points.len()],
            fixed_quadrics: vec![false; state.quadrics.len()],
            robust: true,
        }
    }

    fn check(&self, state: &MapState) -> Result<()> {
        if self.fixed_poses.len() != state.poses.len()
            || self.fixed_points.len() != state.points.len()
            || self.fixed_quadrics.len() != state.quadrics.len()
        {
            return Err(Error::InvalidParameter(
                "BA options do not match the map size".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BAReport {
    pub state: MapState,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_costs: Vec<f64>,
    pub dropped_object_observations: usize,
}

/// Joint problem over free poses, quadrics and points (points eliminated by Schur).
pub struct BundleProblem<'a> {
    intrinsics: Intrinsics,
    points: Vec<&'a PointObservation>,
    objects: Vec<&'a ObjectObservation>,
    spec: &'a ConstraintSpec,
    noise: NoiseModel,
    pose_var: Vec<Option<usize>>,
    quadric_var: Vec<Option<usize>>,
    point_var: Vec<Option<usize>>,
    variables: Vec<Variable>,
    huber: Option<(f64, f64)>,
}

impl BundleProblem<'_> {
    fn camera(&self, s: &MapState, frame: usize) -> CameraView {
        CameraView {
            intrinsics: self.intrinsics,
            pose: s.poses[frame],
        }
    }

    fn weight(&self, e: f64, object: bool) -> (f64, f64) {
        match self.huber {
            Some((kp, ko)) => {
                let k = if object { ko } else { kp };
                (huber_weight(e, k), huber_cost(e, k))
            }
            None => (1.0, 0.5 * e * e),
        }
    }

    /// Whitened pixel residual, plus a depth row when both the observation and the noise model have one.
    fn point_block(
        &self,
        s: &MapState,
        o: &PointObservation,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let cam = self.camera(s, o.frame);
        let p = &s.points[o.point];
        let b = point_reprojection_residual(p, &cam, &o.pixel)?;
        let wp = 1.0 / self.noise.point_sigma;
        let jpoint = b.jacobian_point.expect("point jacobian");
        let (Some(d), Some(rel)) = (o.depth, self.noise.depth_sigma) else {
            return Ok((b.values * wp, b.jacobian_pose * wp, jpoint * wp));
        };
        let pc = cam.pose.transform_point(p).coords;
        let wd = 1.0 / (rel * d);
        let mut r = b.values.insert_row(2, 0.0) * wp;
        r[2] = (pc.z - d) * wd;
        let mut jpose = (b.jacobian_pose * wp).insert_row(2, 0.0);
        let jrow = [0.0, 0.0, 1.0, pc.y, -pc.x, 0.0];
        for (c, v) in jrow.iter().enumerate() {
            jpose[(2, c)] = v * wd;
        }
        let mut jp = (jpoint * wp).insert_row(2, 0.0);
        let rot = cam.pose.rotation.to_rotation_matrix();
        for c in 0..3 {
            jp[(2, c)] = rot.matrix()[(2, c)] * wd;
        }
        Ok((r, jpose, jp))
    }

    fn object_whitened(&self, s: &MapState, o: &ObjectObservation) -> Result<DVector<f64>> {
        let cam = self.camera(s, o.frame);
        Ok(self
            .spec
            .values(&o.measurement, &s.quadrics[o.quadric], &cam)?
            / self.noise.object_sigma)
    }
}

impl Problem for BundleProblem<'_> {
    type State = MapState;

    fn variables(&self) -> Vec<Variable> {
        self.variables.clone()
    }

    fn linearize(&self, s: &MapState) -> Result<Vec<Factor>> {
        let pf = par::map(&self.points, |o| -> Option<Factor> {
            let (r, jpose, jpoint) = self.point_block(s, o).ok()?;
            let w = self.weight(r.norm(), false).0.sqrt();
            let mut jac = Vec::with_capacity(2);
            if let Some(v) = self.pose_var[o.frame] {
                jac.push((v, jpose * w));
            }
            if let Some(v) = self.point_var[o.point] {
                jac.push((v, jpoint * w));
            }
            Some(Factor {
                residual: r * w,
                jacobians: jac,
            })
        });
        let wo = 1.0 / self.noise.object_sigma;
        let of = par::map(&self.objects, |o| -> Option<Factor> {
            let cam = self.camera(s, o.frame);
            let b = self
                .spec
                .residual(&o.measurement, &s.quadrics[o.quadric], &cam)
                .ok()?;
            let r = b.values * wo;
            let w = self.weight(r.norm(), true).0.sqrt() * wo;
            let mut jac = Vec::with_capacity(2);
            if let Some(v) = self.pose_var[o.frame] {
                jac.push((v, b.jacobian_pose * w));
            }
            if let Some(v) = self.quadric_var[o.quadric] {
                jac.push((v, b.jacobian_quadric.expect("quadric jacobian") * w));
            }
            Some(Factor {
                residual: r * (w / wo),
                jacobians: jac,
            })
        });
        Ok(pf
            .into_iter()
            .chain(of)
            .flatten()
            .filter(|f| !f.jacobians.is_empty())
            .collect())
    }

    fn cost(&self, s: &MapState) -> Result<f64> {
        let pc = par::map(&self.points, |o| {
            self.point_block(s, o)
                .map(|(r, _, _)| self.weight(r.norm(), false).1)
        });
        let oc = par::map(&self.objects, |o| {
            self.object_whitened(s, o)
                .map(|r| self.weight(r.norm(), true).1)
        });
        let mut c = 0.0;
        for v in pc.into_iter().chain(oc) {
            c += v?;
        }
        Ok(c)
    }

    fn retract(&self, s: &MapState, dx: &DVector<f64>) -> MapState {
        let mut offsets = Vec::with_capacity(self.variables.len());
        let mut o = 0;
        for v in &self.variables {
            offsets.push(o);
            o += v.dim;
        }
        let mut out = s.clone();
        for (i, v) in self.pose_var.iter().enumerate() {
            if let Some(v) = v {
                let cam = self
                    .camera(s, i)
                    .retract(dx.rows(offsets[*v], 6).as_slice());
                out.poses[i] = cam.pose;
            }
        }
        for (i, v) in self.quadric_var.iter().enumerate() {
            if let Some(v) = v {
                out.quadrics[i] = s.quadrics[i].retract(dx.rows(offsets[*v], 9).as_slice());
            }
        }
        for (i, v) in self.point_var.iter().enumerate() {
            if let Some(v) = v {
                out.points[i] += Vector3::from_column_slice(dx.rows(offsets[*v], 3).as_slice());
            }
        }
        out
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        self.0[a] = b;
    }
}

/// Raw (unwhitened) residual values of every observation at `state`.
pub fn ba_residuals(
    state: &MapState,
    intrinsics: &Intrinsics,
    points: &[PointObservation],
    objects: &[ObjectObservation],
    spec: &ConstraintSpec,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(points.len() + objects.len());
    for o in points {
        let cam = CameraView::new(*intrinsics, state.poses[o.frame])?;
        let r = cam.project_point(&state.points[o.point])? - o.pixel;
        out.push(DVector::from_column_slice(r.as_slice()));
    }
    for o in objects {
        let cam = CameraView::new(*intrinsics, state.poses[o.frame])?;
        out.push(spec.values(&o.measurement, &state.quadrics[o.quadric], &cam)?);
    }
    Ok(out)
}

/// Joint refinement of poses, points and quadrics under the noise model.
#[allow(clippy::too_many_arguments)]
pub fn bundle_adjust(
    state: &MapState,
    intrinsics: &Intrinsics,
    points: &[PointObservation],
    objects: &[ObjectObservation],
    spec: &ConstraintSpec,
    noise: &NoiseModel,
    options: &BAOptions,
    cfg: &LMConfig,
) -> Result<BAReport> {
    noise.validate()?;
    intrinsics.validate()?;
    options.check(state)?;
    for o in points {
        if o.frame >= state.poses.len() || o.point >= state.points.len() {
            return Err(Error::Validation(
                "point observation index out of range".into(),
            ));
        }
    }
    for o in objects {
        if o.frame >= state.poses.len() || o.quadric >= state.quadrics.len() {
            return Err(Error::Validation(
                "object observation index out of range".into(),
            ));
        }
    }
    if !options.fixed_poses.iter().any(|f| *f) {
        return Err(Error::GaugeFixing("no pose is held fixed".into()));
    }

    let (np, nq) = (state.poses.len(), state.quadrics.len());
    let mut problem = BundleProblem {
        intrinsics: *intrinsics,
        points: Vec::new(),
        objects: Vec::new(),
        spec,
        noise: *noise,
        pose_var: vec![None; np],
        quadric_var: vec![None; nq],
        point_var: vec![None; state.points.len()],
        variables: Vec::new(),
        huber: None,
    };
    problem.points = points
        .iter()
        .filter(|o| problem.point_block(state, o).is_ok())
        .collect();
    problem.objects = objects
        .iter()
        .filter(|o| problem.object_whitened(state, o).is_ok())
        .collect();
    let dropped = objects.len() - problem.objects.len();

    // Nodes: poses, quadrics, points.
    let node_q = |q: usize| np + q;
    let node_p = |p: usize| np + nq + p;
    let mut uf = UnionFind((0..np + nq + state.points.len()).collect());
    let mut seen = vec![false; np + nq + state.points.len()];
    for o in &problem.points {
        uf.union(o.frame, node_p(o.point));
        seen[o.frame] = true;
        seen[node_p(o.point)] = true;
    }
    for o in &problem.objects {
        uf.union(o.frame, node_q(o.quadric));
        seen[o.frame] = true;
        seen[node_q(o.quadric)] = true;
    }
    let mut anchored = vec![false; seen.len()];
    for (f, fixed) in options.fixed_poses.iter().enumerate() {
        if *fixed {
            let r = uf.find(f);
            anchored[r] = true;
        }
    }
    let mut free = |node: usize, fixed: bool| -> Result<bool> {
        if fixed || !seen[node] {
            return Ok(false);
        }
        if !anchored[uf.find(node)] {
            return Err(Error::GaugeFixing(format!(
                "observation graph component of node {node} has no fixed pose"
            )));
        }
        Ok(true)
    };
    for f in 0..np {
        if free(f, options.fixed_poses[f])? {
            problem.pose_var[f] = Some(problem.variables.len());
            problem.variables.push(Variable {
                dim: 6,
                eliminate: false,
            });
        }
    }
    for q in 0..nq {
        if free(node_q(q), options.fixed_quadrics[q])? {
            problem.quadric_var[q] = Some(problem.variables.len());
            problem.variables.push(Variable {
                dim: 9,
                eliminate: false,
            });
        }
    }
    for p in 0..state.points.len() {
        if free(node_p(p), options.fixed_points[p])? {
            problem.point_var[p] = Some(problem.variables.len());
            problem.variables.push(Variable {
                dim: 3,
                eliminate: true,
            });
        }
    }

    if options.robust {
        let pn: Vec<f64> = problem
            .points
            .iter()
            .filter_map(|o| problem.point_block(state, o).ok().map(|(r, _, _)| r.norm()))
            .collect();
        let on: Vec<f64> = problem
            .objects
            .iter()
            .filter_map(|o| problem.object_whitened(state, o).ok().map(|r| r.norm()))
            .collect();
        let floor = 1e-9;
        problem.huber = Some((
            median(pn).unwrap_or(1.0).max(floor),
            median(on).unwrap_or(1.0).max(floor),
        ));
    }

    let report = lm_solve(&problem, state.clone(), cfg)?;
    Ok(BAReport {
        state: report.state,
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        iterations: report.iterations,
        accepted_costs: report.accepted_costs,
        dropped_object_observations: dropped,
    })
}
