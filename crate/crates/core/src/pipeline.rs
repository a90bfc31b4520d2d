//! Sequential desk-scale run over one dataset: tracking, object mapping, windowed and global BA.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{Isometry3, Point3};
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSpec, Measurement, Observation};
use crate::error::{Error, Result};
use crate::estimation::{
    bundle_adjust, init_quadric_from_obb, joint_pose_estimate, reconstruct_object, BAOptions,
    LMConfig, MapState, NoiseModel, ObjectObservation, ObjectView, PointObservation, PoseObject,
};
use crate::geometry::{project_quadric, CameraView, EllipsoidParams, Intrinsics};
use crate::hull::{hull_edges, quickhull, Contour2D};
use crate::metrics::{ate_rmse, mtd, siou, AlignMode, TangentObservation, Trajectory};
use crate::scene_sim::{Dataset, FrameData};

/// Bound on how far a quadric may drift from its box initialisation, in box sizes.
const PLAUSIBLE_SCALE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Views an object needs before it is reconstructed.
    pub min_views: usize,
    /// New views that trigger another refinement of a mapped object.
    pub refine_every: usize,
    /// Local BA period in frames (0 disables).
    pub ba_every: usize,
    /// Frames optimised by each local BA.
    pub ba_window: usize,
    pub final_ba: bool,
    /// Huber kernel in BA.
    pub robust: bool,
    /// Points needed before a frame is tracked; with fewer, the odometry guess is kept
    /// unless at least two mapped objects are in view and JPE is on.
    pub min_track_points: usize,
    pub object_lm: LMConfig,
    pub pose_lm: LMConfig,
    pub ba_lm: LMConfig,
    pub final_lm: LMConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_views: 5,
            refine_every: 3,
            ba_every: 5,
            ba_window: 8,
            final_ba: true,
            robust: true,
            min_track_points: 6,
            object_lm: LMConfig::with_iterations(30),
            pose_lm: LMConfig::with_iterations(10),
            ba_lm: LMConfig::with_iterations(8),
            final_lm: LMConfig::with_iterations(20),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_views == 0 || self.refine_every == 0 {
            return Err(Error::Config(
                "min_views and refine_every must be positive".into(),
            ));
        }
        if self.ba_every > 0 && self.ba_window < 2 {
            return Err(Error::Config("ba_window must be at least 2".into()));
        }
        for c in [&self.object_lm, &self.pose_lm, &self.ba_lm, &self.final_lm] {
            c.validate()?;
        }
        Ok(())
    }
}

/// Which object constraint is used and where object terms enter the estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub constraint: ConstraintSpec,
    pub noise: NoiseModel,
    /// Object terms in per-frame pose estimation.
    pub jpe: bool,
    /// Object terms and free quadrics in bundle adjustment.
    pub obj_ba: bool,
}

impl RunOptions {
    pub fn full(constraint: ConstraintSpec, noise: NoiseModel) -> Self {
        Self {
            constraint,
            noise,
            jpe: true,
            obj_ba: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceResult {
    pub name: String,
    /// Estimated world-to-camera poses.
    pub poses: Vec<Isometry3<f64>>,
    pub quadrics: Vec<Option<EllipsoidParams>>,
    /// ATE-RMSE after rigid alignment, metres.
    pub ate: f64,
    /// Mean SIoU over every detection; unmapped objects score 0.
    pub siou: f64,
    /// Mean tangent distance over detections of mapped objects.
    pub mtd: Option<f64>,
    /// LM iterations summed over every solve.
    pub iterations: usize,
    pub seconds: f64,
}

struct ObjectTrack {
    views: Vec<(usize, Measurement)>,
    quadric: Option<EllipsoidParams>,
    refined_at: usize,
}

struct Run<'a> {
    ds: &'a Dataset,
    cfg: &'a PipelineConfig,
    opts: &'a RunOptions,
    poses: Vec<Isometry3<f64>>,
    points: Vec<Option<Point3<f64>>>,
    point_obs: Vec<PointObservation>,
    tracks: Vec<ObjectTrack>,
    iterations: usize,
}

impl Run<'_> {
    fn camera(&self, frame: usize) -> CameraView {
        self.ds.camera(self.poses[frame])
    }

    fn track(&mut self, k: usize) {
        let frame = &self.ds.frames[k];
        let pts: Vec<_> = frame
            .points
            .iter()
            .filter_map(|m| self.points[m.point_id].map(|x| (x, m.pixel)))
            .collect();
        let objects: Vec<PoseObject> = if self.opts.jpe {
            frame
                .detections
                .iter()
                .filter_map(|d| {
                    let t = &self.tracks[d.object_id];
                    let q = t.quadric?;
                    let (_, m) = t.views.iter().find(|(f, _)| *f == k)?;
                    Some(PoseObject {
                        quadric: q,
                        measurement: m.clone(),
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        if pts.len() < self.cfg.min_track_points && objects.len() < 2 {
            debug!(
                "frame {k}: {} points, pose kept at odometry guess",
                pts.len()
            );
            return;
        }
        match joint_pose_estimate(
            &self.camera(k),
            &pts,
            &objects,
            &self.opts.constraint,
            &self.opts.noise,
            &self.cfg.pose_lm,
        ) {
            Ok(fit) => {
                self.iterations += fit.iterations;
                self.poses[k] = fit.pose;
            }
            Err(e) => debug!("frame {k}: pose kept at odometry guess ({e})"),
        }
    }

    fn observe_points(&mut self, k: usize) {
        let cam = self.camera(k);
        for m in &self.ds.frames[k].points {
            if self.points[m.point_id].is_none() {
                self.points[m.point_id] = Some(cam.unproject(&m.pixel, m.depth));
            }
            self.point_obs.push(PointObservation {
                frame: k,
                point: m.point_id,
                pixel: m.pixel,
                depth: Some(m.depth),
            });
        }
    }

    fn observe_objects(&mut self, k: usize) -> Result<()> {
        let spec = &self.opts.constraint;
        for d in &self.ds.frames[k].detections {
            let contour = Contour2D::new(d.contour.clone())?;
            let obs = match Observation::from_contour(
                k,
                d.object_id,
                contour,
                spec.tol,
                spec.max_edges,
            ) {
                Ok(o) => o,
                Err(e) => {
                    debug!(
                        "frame {k}: detection of object {} skipped ({e})",
                        d.object_id
                    );
                    continue;
                }
            };
            match spec.prepare(&obs) {
                Ok(m) => self.tracks[d.object_id].views.push((k, m)),
                Err(e) => debug!(
                    "frame {k}: detection of object {} unusable ({e})",
                    d.object_id
                ),
            }
        }
        Ok(())
    }

    fn reconstruct(&mut self, id: usize, force: bool) {
        let t = &self.tracks[id];
        let n = t.views.len();
        if n < self.cfg.min_views
            || (!force && t.quadric.is_some() && n < t.refined_at + self.cfg.refine_every)
        {
            return;
        }
        let init = match &t.quadric {
            Some(q) => *q,
            None => match init_quadric_from_obb(&self.ds.obbs[id]) {
                Ok(q) => q,
                Err(e) => {
                    warn!("object {id}: box initialisation failed ({e})");
                    return;
                }
            },
        };
        let views: Vec<ObjectView> = t
            .views
            .iter()
            .map(|(f, m)| ObjectView {
                camera: self.camera(*f),
                measurement: m.clone(),
            })
            .collect();
        let fit = reconstruct_object(
            &views,
            &self.opts.constraint,
            &init,
            &self.cfg.object_lm,
            self.cfg.min_views,
        );
        self.tracks[id].refined_at = n;
        match fit {
            Ok(fit) if self.plausible(id, &fit.params) => {
                let t = &mut self.tracks[id];
                self.iterations += fit.iterations;
                t.quadric = Some(fit.params);
            }
            Ok(fit) => {
                self.iterations += fit.iterations;
                debug!("object {id}: implausible reconstruction rejected");
                let t = &mut self.tracks[id];
                if t.quadric.is_none() {
                    t.quadric = Some(init);
                }
            }
            Err(e) => {
                debug!("object {id}: reconstruction failed ({e})");
                let t = &mut self.tracks[id];
                if t.quadric.is_none() {
                    t.quadric = Some(init);
                }
            }
        }
    }

    /// Rejects degenerate estimates: short baselines admit elongated solutions
    /// (cylinders along the viewing direction) that fit every silhouette.
    fn plausible(&self, id: usize, q: &EllipsoidParams) -> bool {
        let obb = &self.ds.obbs[id];
        let size = obb.half_extents.max();
        q.semi_axes.max() <= PLAUSIBLE_SCALE * size
            && q.semi_axes.min() >= size / PLAUSIBLE_SCALE.powi(2)
            && (q.center - obb.center).norm() <= PLAUSIBLE_SCALE * size
    }

    /// BA over observations in `frames`; poses before `free_from` (and frame 0) stay constant.
    fn adjust(
        &mut self,
        frames: std::ops::Range<usize>,
        free_from: usize,
        anchor: Option<usize>,
        cfg: &LMConfig,
    ) {
        let in_range = |f: usize| frames.contains(&f);
        let local: Vec<bool> = {
            let mut v = vec![false; self.points.len()];
            for o in &self.point_obs {
                if o.frame >= free_from && in_range(o.frame) {
                    v[o.point] = true;
                }
            }
            v
        };
        let mut count = vec![0usize; self.points.len()];
        for o in &self.point_obs {
            if in_range(o.frame) && local[o.point] {
                count[o.point] += 1;
            }
        }
        let pobs: Vec<PointObservation> = self
            .point_obs
            .iter()
            .filter(|o| in_range(o.frame) && local[o.point] && count[o.point] >= 2)
            .copied()
            .collect();

        let mut qmap = Vec::new();
        let mut oobs = Vec::new();
        if self.opts.obj_ba {
            for (id, t) in self.tracks.iter().enumerate() {
                if t.quadric.is_none() {
                    continue;
                }
                let before = oobs.len();
                for (f, m) in &t.views {
                    if in_range(*f) {
                        oobs.push(ObjectObservation {
                            frame: *f,
                            quadric: qmap.len(),
                            measurement: m.clone(),
                        });
                    }
                }
                if oobs.len() > before {
                    qmap.push(id);
                }
            }
        }

        let state = MapState {
            poses: self.poses.clone(),
            points: self
                .points
                .iter()
                .map(|p| p.unwrap_or_else(Point3::origin))
                .collect(),
            quadrics: qmap
                .iter()
                .map(|id| self.tracks[*id].quadric.expect("mapped"))
                .collect(),
            associations: Vec::new(),
        };
        let mut options = BAOptions::standard(&state);
        options.robust = self.cfg.robust;
        for (f, fixed) in options.fixed_poses.iter_mut().enumerate() {
            *fixed = f == 0 || f < free_from || !in_range(f);
        }
        if let Some(a) = anchor {
            options.fixed_points[a] = true;
        }
        match bundle_adjust(
            &state,
            &self.ds.intrinsics,
            &pobs,
            &oobs,
            &self.opts.constraint,
            &self.opts.noise,
            &options,
            cfg,
        ) {
            Ok(r) => {
                self.iterations += r.iterations;
                self.poses = r.state.poses;
                for (i, p) in r.state.points.into_iter().enumerate() {
                    if self.points[i].is_some() {
                        self.points[i] = Some(p);
                    }
                }
                for (id, q) in qmap.iter().zip(r.state.quadrics) {
                    if self.plausible(*id, &q) {
                        self.tracks[*id].quadric = Some(q);
                    } else {
                        debug!("object {id}: implausible BA update rejected");
                    }
                }
            }
            Err(e) => debug!("BA over frames {frames:?} skipped ({e})"),
        }
    }

    /// Frame-0 point with the longest track, ties broken by distance to the world origin.
    fn anchor_point(&self) -> Option<usize> {
        let mut count = vec![0usize; self.points.len()];
        for o in &self.point_obs {
            count[o.point] += 1;
        }
        self.ds
            .frames
            .first()?
            .points
            .iter()
            .map(|m| m.point_id)
            .max_by(|a, b| {
                count[*a].cmp(&count[*b]).then(
                    self.ds.points[*b]
                        .coords
                        .norm()
                        .total_cmp(&self.ds.points[*a].coords.norm()),
                )
            })
    }
}

/// Runs the full sequence and evaluates it against ground truth.
pub fn run_sequence(
    ds: &Dataset,
    cfg: &PipelineConfig,
    opts: &RunOptions,
) -> Result<SequenceResult> {
    cfg.validate()?;
    opts.noise.validate()?;
    let n = ds.frames.len();
    if n == 0
        || ds.odometry.len() != n
        || ds.gt_poses.len() != n
        || ds.obbs.len() != ds.objects.len()
    {
        return Err(Error::Validation(
            "dataset frame, pose and object counts disagree".into(),
        ));
    }
    let start = Instant::now();
    let mut run = Run {
        ds,
        cfg,
        opts,
        poses: vec![ds.odometry[0]; n],
        points: vec![None; ds.points.len()],
        point_obs: Vec::new(),
        tracks: (0..ds.objects.len())
            .map(|_| ObjectTrack {
                views: Vec::new(),
                quadric: None,
                refined_at: 0,
            })
            .collect(),
        iterations: 0,
    };

    for k in 0..n {
        run.observe_objects(k)?;
        if k > 0 {
            let rel = ds.odometry[k] * ds.odometry[k - 1].inverse();
            run.poses[k] = rel * run.poses[k - 1];
            run.track(k);
        }
        run.observe_points(k);
        for id in 0..ds.objects.len() {
            run.reconstruct(id, false);
        }
        if cfg.ba_every > 0 && k > 0 && k % cfg.ba_every == 0 {
            // Without depth, two constant poses fix the scale gauge of the window.
            let min_free = if opts.noise.depth_sigma.is_some() {
                1
            } else {
                2
            };
            let free_from = (k + 1).saturating_sub(cfg.ba_window).max(min_free);
            let lo = free_from.saturating_sub(cfg.ba_window);
            run.adjust(lo..k + 1, free_from, None, &cfg.ba_lm);
        }
    }
    if cfg.final_ba {
        // Measured depths fix the scale; without them one point is frozen as well.
        let anchor = if opts.noise.depth_sigma.is_none() {
            run.anchor_point()
        } else {
            None
        };
        run.adjust(0..n, 1, anchor, &cfg.final_lm);
    }
    for id in 0..ds.objects.len() {
        run.reconstruct(id, true);
    }

    let quadrics: Vec<Option<EllipsoidParams>> = run.tracks.iter().map(|t| t.quadric).collect();
    let est = Trajectory::from_world_to_camera(ds.timestamps.clone(), &run.poses)?;
    let gt = Trajectory::from_world_to_camera(ds.timestamps.clone(), &ds.gt_poses)?;
    let ate = ate_rmse(&est, &gt, AlignMode::Se3)?.rmse;
    let (siou, mtd) = evaluate_map(ds, &run.poses, &quadrics)?;
    Ok(SequenceResult {
        name: ds.name.clone(),
        poses: run.poses,
        quadrics,
        ate,
        siou,
        mtd,
        iterations: run.iterations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean SIoU over every detection (0 for unmapped or unprojectable objects) and MTD over mapped ones.
pub fn evaluate_map(
    ds: &Dataset,
    poses: &[Isometry3<f64>],
    quadrics: &[Option<EllipsoidParams>],
) -> Result<(f64, Option<f64>)> {
    evaluate_frames(&ds.intrinsics, &ds.frames, poses, quadrics)
}

/// [`evaluate_map`] on bare frames; `poses` are world-to-camera, one per frame.
pub fn evaluate_frames(
    intrinsics: &Intrinsics,
    frames: &[FrameData],
    poses: &[Isometry3<f64>],
    quadrics: &[Option<EllipsoidParams>],
) -> Result<(f64, Option<f64>)> {
    if poses.len() != frames.len() {
        return Err(Error::Validation(format!(
            "{} poses for {} frames",
            poses.len(),
            frames.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut tangent = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        let cam = CameraView {
            intrinsics: *intrinsics,
            pose: poses[k],
        };
        for d in &frame.detections {
            count += 1;
            let Some(q) = quadrics.get(d.object_id).and_then(|q| q.as_ref()) else {
                continue;
            };
            let contour = Contour2D::new(d.contour.clone())?;
            let dual = q.dual();
            if let Ok(c) = project_quadric(&dual, &cam) {
                total += siou(&c, &contour).unwrap_or(0.0);
            }
            if let Ok(h) = quickhull(&contour) {
                tangent.push((dual, cam, hull_edges(&h)));
            }
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("dataset has no detections".into()));
    }
    let obs: Vec<TangentObservation> = tangent
        .iter()
        .map(|(q, c, l)| TangentObservation {
            quadric: q,
            camera: c,
            lines: l,
        })
        .collect();
    let mtd = if obs.is_empty() { None } else { mtd(&obs).ok() };
    Ok((total / count as f64, mtd))
}
