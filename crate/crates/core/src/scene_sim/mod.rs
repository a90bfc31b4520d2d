//! Synthetic desk scenes: ellipsoid and composite objects, camera paths, point tracks and
//! rendered segmentation contours.

mod mvee;
mod render;

use nalgebra::{Isometry3, Point2, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Obb;
use crate::geometry::{CameraView, EllipsoidParams, Intrinsics};

pub use mvee::mvee;
pub use render::{render_contour, tangent_polygon, union_boundary, CONTOUR_POINTS, SWEEP_SAMPLES};

/// Tolerance of the enclosing-ellipsoid iteration for composite ground truth.
pub const MVEE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Circle around `center` at `radius` and `height`, covering `arc` radians.
    Orbit {
        radius: f64,
        height: f64,
        arc: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// Back-and-forth rows at distance `standoff` from the scene centre.
    Lawnmower {
        width: f64,
        rows: usize,
        row_spacing: f64,
        standoff: f64,
        height: f64,
    },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self::Orbit {
            radius: 1.8,
            height: 0.9,
            arc: std::f64::consts::PI,
            center: [0.0, 0.0, 0.1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectMix {
    Single,
    Composite,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectsSpec {
    pub count: usize,
    pub mix: ObjectMix,
    /// Objects are placed within this radius of the scene centre.
    pub region_radius: f64,
    /// Range of the largest semi-axis of a primary ellipsoid, metres.
    pub size: [f64; 2],
}

impl Default for ObjectsSpec {
    fn default() -> Self {
        Self {
            count: 4,
            mix: ObjectMix::Mixed,
            region_radius: 0.5,
            size: [0.08, 0.16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointsSpec {
    pub count: usize,
    /// Half-width of the square region holding the points.
    pub extent: f64,
    pub height: [f64; 2],
    /// Inclusive range of track lengths in frames; 0 means visible throughout.
    pub track_length: [usize; 2],
}

impl Default for PointsSpec {
    fn default() -> Self {
        Self {
            count: 200,
            extent: 1.2,
            height: [-0.2, 1.0],
            track_length: [0, 0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Radial contour noise, px.
    pub pixel_sigma: f64,
    /// Fraction of each contour removed as one contiguous span.
    pub contour_dropout: f64,
    /// Pixel noise of point features.
    pub point_sigma: f64,
    /// Relative depth noise of point features.
    pub depth_sigma: f64,
    /// Per-frame odometry noise (translation m, rotation rad).
    pub pose_perturb: [f64; 2],
    /// Noise on the surface samples the box initialisation is computed from, m.
    pub obb_sigma: f64,
    /// Render single ellipsoids as tangent polygons instead of on-curve samples.
    pub exact_tangent: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            contour_dropout: 0.0,
            point_sigma: 0.0,
            depth_sigma: 0.0,
            pose_perturb: [0.0, 0.0],
            obb_sigma: 0.0,
            exact_tangent: false,
        }
    }
}

impl NoiseSpec {
    pub fn is_noiseless(&self) -> bool {
        self.pixel_sigma == 0.0
            && self.contour_dropout == 0.0
            && self.point_sigma == 0.0
            && self.depth_sigma == 0.0
            && self.pose_perturb == [0.0, 0.0]
            && self.obb_sigma == 0.0
    }
}

/// One object translating at constant velocity from `start_frame` on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicSpec {
    pub object: usize,
    /// Metres per second.
    pub velocity: [f64; 3],
    #[serde(default)]
    pub start_frame: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    /// Seed of the scene geometry (objects, points, track windows).
    pub layout_seed: u64,
    /// Seed of every noise realisation.
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub frame_rate: f64,
    pub trajectory: TrajectorySpec,
    pub objects: ObjectsSpec,
    pub points: PointsSpec,
    pub noise: NoiseSpec,
    pub dynamic: Option<DynamicSpec>,
    pub min_views: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            name: "scene".into(),
            layout_seed: 0,
            seed: 0,
            width: 640,
            height: 480,
            intrinsics: Intrinsics::new(525.0, 525.0, 319.5, 239.5),
            frames: 30,
            frame_rate: 30.0,
            trajectory: TrajectorySpec::default(),
            objects: ObjectsSpec::default(),
            points: PointsSpec::default(),
            noise: NoiseSpec::default(),
            dynamic: None,
            min_views: 5,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.intrinsics
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.frames == 0 {
            return bad("frames must be >= 1".into());
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        let o = &self.objects;
        if !(o.size[0] > 0.0 && o.size[1] >= o.size[0]) || !(o.region_radius >= 0.0) {
            return bad("objects.size must be an increasing positive range".into());
        }
        let p = &self.points;
        if p.track_length[0] > p.track_length[1] || !(p.extent > 0.0) || p.height[0] > p.height[1] {
            return bad("invalid points section".into());
        }
        let n = &self.noise;
        let sigmas = [
            n.pixel_sigma,
            n.point_sigma,
            n.depth_sigma,
            n.pose_perturb[0],
            n.pose_perturb[1],
            n.obb_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise sigmas must be finite and >= 0".into());
        }
        if !(0.0..0.5).contains(&n.contour_dropout) {
            return bad("contour_dropout must lie in [0, 0.5)".into());
        }
        match &self.trajectory {
            TrajectorySpec::Orbit { radius, .. } if !(*radius > 0.0) => {
                return bad("orbit radius must be positive".into())
            }
            TrajectorySpec::Lawnmower { rows, width, .. } if *rows == 0 || !(*width > 0.0) => {
                return bad("lawnmower needs rows >= 1 and positive width".into())
            }
            _ => {}
        }
        if let Some(d) = &self.dynamic {
            if d.object >= o.count {
                return bad(format!("dynamic object {} out of range", d.object));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate
    }
}

/// Ground-truth object: one ellipsoid, or a union of 2–4 ellipsoids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub class: String,
    pub members: Vec<EllipsoidParams>,
    /// Reference quadric: the ellipsoid itself or the enclosing ellipsoid of a composite.
    pub quadric: EllipsoidParams,
}

impl SceneObject {
    pub fn is_composite(&self) -> bool {
        self.members.len() > 1
    }

    pub fn translated(&self, d: &Vector3<f64>) -> Self {
        let t = Isometry3::translation(d.x, d.y, d.z);
        Self {
            id: self.id,
            class: self.class.clone(),
            members: self.members.iter().map(|m| m.transformed(&t)).collect(),
            quadric: self.quadric.transformed(&t),
        }
    }

    /// Surface samples of the union (points inside another member are dropped).
    pub fn surface_samples(&self, per_member: usize) -> Vec<Point3<f64>> {
        let rings = ((per_member as f64).sqrt().ceil() as usize).max(2);
        let mut out = Vec::new();
        for (k, m) in self.members.iter().enumerate() {
            for i in 0..rings {
                for j in 0..rings {
                    let polar = std::f64::consts::PI * (i as f64 + 0.5) / rings as f64;
                    let az = 2.0 * std::f64::consts::PI * j as f64 / rings as f64;
                    let p = m.surface_point(polar, az);
                    let inside_other = self
                        .members
                        .iter()
                        .enumerate()
                        .any(|(l, o)| l != k && o.implicit(&p) < 0.0);
                    if !inside_other {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// One detection of a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: usize,
    pub class: String,
    pub bbox: [f64; 4],
    pub contour: Vec<Point2<f64>>,
}

/// Pixel and depth measurement of a point feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMeasurement {
    pub point_id: usize,
    pub pixel: Point2<f64>,
    pub depth: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameData {
    pub detections: Vec<Detection>,
    pub points: Vec<PointMeasurement>,
}

/// Everything a run needs, plus ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub timestamps: Vec<f64>,
    /// World-to-camera ground truth.
    pub gt_poses: Vec<Isometry3<f64>>,
    /// World-to-camera initial guesses from noisy relative motion.
    pub odometry: Vec<Isometry3<f64>>,
    pub objects: Vec<SceneObject>,
    pub obbs: Vec<Obb>,
    pub points: Vec<Point3<f64>>,
    pub frames: Vec<FrameData>,
    pub dynamic: Option<DynamicSpec>,
}

impl Dataset {
    pub fn camera(&self, pose: Isometry3<f64>) -> CameraView {
        CameraView {
            intrinsics: self.intrinsics,
            pose,
        }
    }

    /// Objects as they are at `frame`, accounting for the dynamic object.
    pub fn objects_at(&self, frame: usize, frame_rate: f64) -> Vec<SceneObject> {
        objects_at(&self.objects, self.dynamic.as_ref(), frame, frame_rate)
    }

    pub fn frame_rate(&self) -> f64 {
        if self.timestamps.len() > 1 {
            1.0 / (self.timestamps[1] - self.timestamps[0])
        } else {
            30.0
        }
    }
}

fn objects_at(
    objects: &[SceneObject],
    dynamic: Option<&DynamicSpec>,
    frame: usize,
    frame_rate: f64,
) -> Vec<SceneObject> {
    objects
        .iter()
        .enumerate()
        .map(|(i, o)| match dynamic {
            Some(d) if d.object == i && frame > d.start_frame => {
                let dt = (frame - d.start_frame) as f64 / frame_rate;
                o.translated(&(Vector3::from(d.velocity) * dt))
            }
            _ => o.clone(),
        })
        .collect()
}

/// World-to-camera pose at `eye` looking at `target` with world +z up (image y down).
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>) -> Result<Isometry3<f64>> {
    let f = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidParameter("eye and target coincide".into()))?;
    let x = f
        .cross(&Vector3::z())
        .try_normalize(1e-9)
        .ok_or_else(|| Error::InvalidParameter("viewing direction is vertical".into()))?;
    let y = f.cross(&x);
    let r_cw = Rotation3::from_basis_unchecked(&[x, y, f]);
    let r = r_cw.inverse();
    let t = -(r * eye.coords);
    Ok(Isometry3::from_parts(
        Translation3::from(t),
        UnitQuaternion::from_rotation_matrix(&r),
    ))
}

/// Ground-truth camera path.
pub fn trajectory(spec: &SceneSpec) -> Result<Vec<Isometry3<f64>>> {
    let n = spec.frames;
    let s = |i: usize| {
        if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    (0..n)
        .map(|i| match &spec.trajectory {
            TrajectorySpec::Orbit {
                radius,
                height,
                arc,
                center,
            } => {
                let c = Point3::from(*center);
                let th = -0.5 * arc + arc * s(i);
                let wobble = 1.0 + 0.15 * (3.0 * th).sin();
                let eye = c + Vector3::new(radius * th.cos(), radius * th.sin(), height * wobble);
                let target =
                    c + Vector3::new(0.03 * (2.0 * th).sin(), 0.03 * (5.0 * th).cos(), 0.0);
                look_at(&eye, &target)
            }
            TrajectorySpec::Lawnmower {
                width,
                rows,
                row_spacing,
                standoff,
                height,
            } => {
                let per_row = (n as f64 / *rows as f64).ceil().max(1.0) as usize;
                let row = i / per_row;
                let k = i % per_row;
                let u = if per_row > 1 {
                    k as f64 / (per_row - 1) as f64
                } else {
                    0.5
                };
                let u = if row.is_multiple_of(2) { u } else { 1.0 - u };
                let x = -0.5 * width + width * u;
                let eye = Point3::new(x, -standoff - row as f64 * row_spacing, *height);
                let target = Point3::new(0.3 * x, 0.0, 0.1);
                look_at(&eye, &target)
            }
        })
        .collect()
}

fn random_rotation_yaw(rng: &mut ChaCha8Rng, tilt: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(
        rng.random_range(-tilt..=tilt),
        rng.random_range(-tilt..=tilt),
        rng.random_range(0.0..std::f64::consts::TAU),
    )
}

fn single_object(
    rng: &mut ChaCha8Rng,
    size: [f64; 2],
    base: Vector3<f64>,
) -> Result<Vec<EllipsoidParams>> {
    let a = rng.random_range(size[0]..=size[1]);
    let axes = Vector3::new(
        a,
        a * rng.random_range(0.45..0.9),
        a * rng.random_range(0.4..0.9),
    );
    let rot = random_rotation_yaw(rng, 0.3);
    Ok(vec![EllipsoidParams::from_rotation(
        base + Vector3::new(0.0, 0.0, axes.z.max(axes.x * 0.5)),
        rot,
        axes,
    )?])
}

/// Primary body plus 1–3 protruding parts, which makes silhouettes concave.
fn composite_object(
    rng: &mut ChaCha8Rng,
    size: [f64; 2],
    base: Vector3<f64>,
) -> Result<Vec<EllipsoidParams>> {
    let a = rng.random_range(size[0]..=size[1]);
    let body_axes = Vector3::new(
        a,
        a * rng.random_range(0.6..0.9),
        a * rng.random_range(0.6..1.0),
    );
    let yaw = Rotation3::from_axis_angle(
        &Vector3::z_axis(),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let body_center = base + Vector3::new(0.0, 0.0, body_axes.z);
    let mut members = vec![EllipsoidParams::from_rotation(body_center, yaw, body_axes)?];
    let parts = rng.random_range(1..=3usize);
    let first_dir = rng.random_range(0.0..std::f64::consts::TAU);
    for k in 0..parts {
        let phi = first_dir
            + k as f64 * std::f64::consts::TAU / parts as f64
            + rng.random_range(-0.4..0.4);
        let elev: f64 = rng.random_range(-0.2..0.9);
        let dir = Vector3::new(phi.cos() * elev.cos(), phi.sin() * elev.cos(), elev.sin());
        let len = a * rng.random_range(0.5..0.8);
        let thick = a * rng.random_range(0.2..0.35);
        // Long axis of the part points along `dir`.
        let rot =
            Rotation3::rotation_between(&Vector3::x(), &dir).unwrap_or_else(Rotation3::identity);
        let reach = 0.85
            * (body_axes.x * dir.x.abs() + body_axes.y * dir.y.abs() + body_axes.z * dir.z.abs());
        let center = body_center + yaw * (dir * (reach + 0.8 * len));
        members.push(EllipsoidParams::from_rotation(
            center,
            yaw * rot,
            Vector3::new(len, thick, thick * rng.random_range(0.7..1.0)),
        )?);
    }
    Ok(members)
}

fn reference_quadric(members: &[EllipsoidParams]) -> Result<EllipsoidParams> {
    if members.len() == 1 {
        return Ok(members[0]);
    }
    let obj = SceneObject {
        id: 0,
        class: String::new(),
        members: members.to_vec(),
        quadric: members[0],
    };
    mvee(&obj.surface_samples(400), MVEE_TOL, 200_000)
}

fn bounding_radius(members: &[EllipsoidParams], center: &Vector3<f64>) -> f64 {
    members
        .iter()
        .map(|m| (m.center - center).norm() + m.semi_axes.max())
        .fold(0.0, f64::max)
}

/// Objects, points and each point's visible frame window `[first, last]`.
pub type Layout = (Vec<SceneObject>, Vec<Point3<f64>>, Vec<(usize, usize)>);

/// Scene layout: objects and points, depending on `layout_seed` only.
pub fn generate_layout(spec: &SceneSpec) -> Result<Layout> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.layout_seed);
    let center = match &spec.trajectory {
        TrajectorySpec::Orbit { center, .. } => Vector3::new(center[0], center[1], 0.0),
        TrajectorySpec::Lawnmower { .. } => Vector3::zeros(),
    };
    let o = &spec.objects;
    let mut objects: Vec<SceneObject> = Vec::with_capacity(o.count);
    let mut placed: Vec<(Vector3<f64>, f64)> = Vec::new();
    for id in 0..o.count {
        let composite = match o.mix {
            ObjectMix::Single => false,
            ObjectMix::Composite => true,
            ObjectMix::Mixed => id % 2 == 1,
        };
        let mut attempt = 0;
        let members = loop {
            attempt += 1;
            let ang = std::f64::consts::TAU * id as f64 / o.count.max(1) as f64
                + rng.random_range(-0.5..0.5);
            let r = o.region_radius * rng.random_range(0.35..1.0_f64).sqrt();
            let base = center + Vector3::new(r * ang.cos(), r * ang.sin(), 0.0);
            let members = if composite {
                composite_object(&mut rng, o.size, base)?
            } else {
                single_object(&mut rng, o.size, base)?
            };
            let br = bounding_radius(&members, &base);
            let free = placed
                .iter()
                .all(|(c, rr)| (c - base).xy().norm() > rr + br + 0.02);
            if free || attempt > 200 {
                placed.push((base, br));
                break members;
            }
        };
        let quadric = reference_quadric(&members)?;
        objects.push(SceneObject {
            id,
            class: if composite {
                "composite".into()
            } else {
                "ellipsoid".into()
            },
            members,
            quadric,
        });
    }
    let p = &spec.points;
    let mut points = Vec::with_capacity(p.count);
    let mut windows = Vec::with_capacity(p.count);
    for _ in 0..p.count {
        points.push(Point3::new(
            center.x + rng.random_range(-p.extent..=p.extent),
            center.y + rng.random_range(-p.extent..=p.extent),
            rng.random_range(p.height[0]..=p.height[1]),
        ));
        let window = if p.track_length[1] == 0 {
            (0, spec.frames)
        } else {
            let len = rng
                .random_range(p.track_length[0]..=p.track_length[1])
                .max(2);
            let start = rng.random_range(0..spec.frames.max(1));
            (
                start.saturating_sub(len / 2),
                (start + len - len / 2).min(spec.frames),
            )
        };
        windows.push(window);
    }
    Ok((objects, points, windows))
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

/// Renders a full dataset for `spec`.
pub fn render_observations(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let (objects, points, windows) = generate_layout(spec)?;
    let gt_poses = trajectory(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let nz = &spec.noise;

    let mut odometry = Vec::with_capacity(gt_poses.len());
    for (i, gt) in gt_poses.iter().enumerate() {
        if i == 0 {
            odometry.push(*gt);
            continue;
        }
        let rel = gt * gt_poses[i - 1].inverse();
        let dt = Vector3::from_fn(|_, _| normal(nz.pose_perturb[0]).sample(&mut rng));
        let dr = Vector3::from_fn(|_, _| normal(nz.pose_perturb[1]).sample(&mut rng));
        odometry.push(Isometry3::new(dt, dr) * rel * odometry[i - 1]);
    }

    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut views = vec![0usize; objects.len()];
    for (f, pose) in gt_poses.iter().enumerate() {
        let cam = CameraView::new(spec.intrinsics, *pose)?;
        let mut frame = FrameData::default();
        for obj in objects_at(&objects, spec.dynamic.as_ref(), f, spec.frame_rate) {
            let Ok(contour) = render_contour(&obj, &cam, nz, &mut rng) else {
                continue;
            };
            if !contour.iter().all(|p| CameraView::in_image(p, w, h)) {
                continue;
            }
            views[obj.id] += 1;
            frame.detections.push(Detection {
                object_id: obj.id,
                class: obj.class.clone(),
                bbox: crate::hull::bbox(&contour),
                contour,
            });
        }
        for (id, (x, win)) in points.iter().zip(&windows).enumerate() {
            if f < win.0 || f >= win.1 {
                continue;
            }
            let depth = cam.depth(x);
            let Ok(px) = cam.project_point(x) else {
                continue;
            };
            if !(depth > 0.1) || !CameraView::in_image(&px, w, h) {
                continue;
            }
            let noise = nalgebra::Vector2::from_fn(|_, _| normal(nz.point_sigma).sample(&mut rng));
            let dn = normal(nz.depth_sigma).sample(&mut rng);
            frame.points.push(PointMeasurement {
                point_id: id,
                pixel: px + noise,
                depth: depth * (1.0 + dn),
            });
        }
        frames.push(frame);
    }
    if spec.frames >= spec.min_views {
        if let Some((id, n)) = views.iter().enumerate().find(|(_, n)| **n < spec.min_views) {
            return Err(Error::Validation(format!(
                "object {id} is visible in {n} frames, fewer than min_views = {}",
                spec.min_views
            )));
        }
    }

    let obbs = objects
        .iter()
        .map(|o| {
            let mut pts = o.surface_samples(300);
            for p in &mut pts {
                *p += Vector3::from_fn(|_, _| normal(nz.obb_sigma).sample(&mut rng));
            }
            Obb::from_points(&pts)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        name: spec.name.clone(),
        intrinsics: spec.intrinsics,
        width: spec.width,
        height: spec.height,
        seed: spec.seed,
        timestamps: (0..spec.frames).map(|i| spec.timestamp(i)).collect(),
        gt_poses,
        odometry,
        objects,
        obbs,
        points,
        frames,
        dynamic: spec.dynamic.clone(),
    })
}
