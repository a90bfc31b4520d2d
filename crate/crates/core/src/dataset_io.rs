//! File formats: TUM trajectories, JSON observation and map files, TOML configs and the
//! dataset directory layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Point2, Point3, Quaternion, Translation3, UnitQuaternion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Obb;
use crate::geometry::{EllipsoidParams, Intrinsics};
use crate::metrics::Trajectory;
use crate::scene_sim::{Dataset, Detection, DynamicSpec, FrameData, PointMeasurement, SceneObject};

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const ODOMETRY_FILE: &str = "odometry.txt";
pub const OBSERVATIONS_FILE: &str = "observations.json";
pub const POINTS_FILE: &str = "points.json";
pub const MAP_GT_FILE: &str = "map_gt.json";
pub const META_FILE: &str = "meta.json";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines (camera-to-world).
pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("'{t}' is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 8 fields, found {}", vals.len()),
            });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite value".into(),
            });
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if !(q.norm() > 1e-12) {
            return Err(Error::Parse {
                line: lineno,
                message: "zero quaternion".into(),
            });
        }
        if let Some(&last) = stamps.last() {
            if !(vals[0] > last) {
                return Err(Error::Validation(format!(
                    "line {lineno}: timestamp {} does not increase (previous {last})",
                    vals[0]
                )));
            }
        }
        stamps.push(vals[0]);
        // Stored unit quaternions are kept bit-exact; renormalizing them would drift the
        // last digit on every read/write cycle.
        let rotation = if (q.norm_squared() - 1.0).abs() <= 8.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        poses.push(Isometry3::from_parts(
            Translation3::new(vals[1], vals[2], vals[3]),
            rotation,
        ));
    }
    Trajectory::new(stamps, poses)
}

/// TUM text with shortest round-trip float formatting.
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.stamps().iter().zip(traj.poses()) {
        let v = p.translation.vector;
        let q = p.rotation.coords;
        let _ = writeln!(
            s,
            "{t} {} {} {} {} {} {} {}",
            v.x, v.y, v.z, q.x, q.y, q.z, q.w
        );
    }
    s
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&read_text(path)?)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_text(path, &format_trajectory(traj))
}

/// Rounds to six fractional digits through the decimal representation.
pub fn round6(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub object_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id_gt: Option<usize>,
    pub bbox: [f64; 4],
    pub contour: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub timestamp: f64,
    pub detections: Vec<DetectionRecord>,
}

fn json_line_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

fn validate_frames(frames: &[FrameRecord]) -> Result<()> {
    for (fi, f) in frames.iter().enumerate() {
        for (di, d) in f.detections.iter().enumerate() {
            let at = format!("frame {} (index {fi}), detection {di}", f.frame_id);
            if d.contour.len() < 3 {
                return Err(Error::Validation(format!(
                    "{at}: contour has fewer than 3 points"
                )));
            }
            if d.bbox
                .iter()
                .chain(d.contour.iter().flatten())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Validation(format!("{at}: non-finite coordinate")));
            }
            let eps = 1e-6;
            let b = d.bbox;
            if d.contour.iter().any(|p| {
                p[0] < b[0] - eps || p[0] > b[2] + eps || p[1] < b[1] - eps || p[1] > b[3] + eps
            }) {
                return Err(Error::Validation(format!(
                    "{at}: bbox does not contain the contour"
                )));
            }
        }
    }
    Ok(())
}

pub fn parse_observations(text: &str) -> Result<Vec<FrameRecord>> {
    let frames: Vec<FrameRecord> = serde_json::from_str(text).map_err(json_line_error)?;
    validate_frames(&frames)?;
    Ok(frames)
}

/// JSON with contour and bbox coordinates rounded to six fractional digits.
pub fn format_observations(frames: &[FrameRecord]) -> Result<String> {
    let rounded: Vec<FrameRecord> = frames
        .iter()
        .map(|f| FrameRecord {
            frame_id: f.frame_id,
            timestamp: f.timestamp,
            detections: f
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    object_class: d.object_class.clone(),
                    object_id_gt: d.object_id_gt,
                    bbox: d.bbox.map(round6),
                    contour: d.contour.iter().map(|p| p.map(round6)).collect(),
                })
                .collect(),
        })
        .collect();
    let mut s = serde_json::to_string(&rounded)?;
    s.push('\n');
    Ok(s)
}

pub fn read_observations(path: &Path) -> Result<Vec<FrameRecord>> {
    parse_observations(&read_text(path)?)
}

pub fn write_observations(frames: &[FrameRecord], path: &Path) -> Result<()> {
    write_text(path, &format_observations(frames)?)
}

/// Parses a TOML document into `T`, reporting the offending line.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        match line {
            Some(l) => Error::Config(format!("line {l}: {}", e.message())),
            None => Error::Config(e.message().to_string()),
        }
    })
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PointFrameRecord {
    frame_id: usize,
    points: Vec<PointRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    id: usize,
    px: [f64; 2],
    depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MetaRecord {
    name: String,
    seed: u64,
    width: u32,
    height: u32,
    intrinsics: Intrinsics,
}

/// Ground-truth map: objects, their box initialisations and 3D points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMap {
    pub objects: Vec<SceneObject>,
    pub obbs: Vec<Obb>,
    pub points: Vec<Point3<f64>>,
    #[serde(default)]
    pub dynamic: Option<DynamicSpec>,
}

/// Estimated or reference quadric map used by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub intrinsics: Intrinsics,
    pub objects: Vec<MapObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapObject {
    pub object_id: usize,
    pub quadric: EllipsoidParams,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(json_line_error)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// Observation records of a dataset, ground-truth ids included.
pub fn dataset_frames(ds: &Dataset) -> Vec<FrameRecord> {
    ds.frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameRecord {
            frame_id: i,
            timestamp: ds.timestamps[i],
            detections: f
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    object_class: d.class.clone(),
                    object_id_gt: Some(d.object_id),
                    bbox: d.bbox,
                    contour: d.contour.iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
        })
        .collect()
}

/// Writes the six files of a dataset directory.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trajectory(
        &Trajectory::from_world_to_camera(ds.timestamps.clone(), &ds.gt_poses)?,
        &dir.join(GROUNDTRUTH_FILE),
    )?;
    write_trajectory(
        &Trajectory::from_world_to_camera(ds.timestamps.clone(), &ds.odometry)?,
        &dir.join(ODOMETRY_FILE),
    )?;
    write_observations(&dataset_frames(ds), &dir.join(OBSERVATIONS_FILE))?;
    let points: Vec<PointFrameRecord> = ds
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| PointFrameRecord {
            frame_id: i,
            points: f
                .points
                .iter()
                .map(|p| PointRecord {
                    id: p.point_id,
                    px: [p.pixel.x, p.pixel.y],
                    depth: p.depth,
                })
                .collect(),
        })
        .collect();
    let mut s = serde_json::to_string(&points)?;
    s.push('\n');
    write_text(&dir.join(POINTS_FILE), &s)?;
    write_json(
        &GroundTruthMap {
            objects: ds.objects.clone(),
            obbs: ds.obbs.clone(),
            points: ds.points.clone(),
            dynamic: ds.dynamic.clone(),
        },
        &dir.join(MAP_GT_FILE),
    )?;
    write_json(
        &MetaRecord {
            name: ds.name.clone(),
            seed: ds.seed,
            width: ds.width,
            height: ds.height,
            intrinsics: ds.intrinsics,
        },
        &dir.join(META_FILE),
    )
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: MetaRecord = read_json(&dir.join(META_FILE))?;
    meta.intrinsics
        .validate()
        .map_err(|e| Error::Validation(format!("{}: {e}", META_FILE)))?;
    let gt = read_trajectory(&dir.join(GROUNDTRUTH_FILE))?;
    let odo = read_trajectory(&dir.join(ODOMETRY_FILE))?;
    let obs = read_observations(&dir.join(OBSERVATIONS_FILE))?;
    let pts: Vec<PointFrameRecord> = read_json(&dir.join(POINTS_FILE))?;
    let map: GroundTruthMap = read_json(&dir.join(MAP_GT_FILE))?;
    let n = gt.len();
    if odo.len() != n || obs.len() != n || pts.len() != n {
        return Err(Error::Validation(format!(
            "frame counts disagree: groundtruth {n}, odometry {}, observations {}, points {}",
            odo.len(),
            obs.len(),
            pts.len()
        )));
    }
    let mut frames = Vec::with_capacity(n);
    for (i, (o, p)) in obs.iter().zip(&pts).enumerate() {
        if o.frame_id != i || p.frame_id != i {
            return Err(Error::Validation(format!("frame {i} is out of order")));
        }
        let detections = o
            .detections
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let id = d.object_id_gt.ok_or_else(|| {
                    Error::Validation(format!("frame {i}, detection {k}: missing object_id_gt"))
                })?;
                if id >= map.objects.len() {
                    return Err(Error::Validation(format!(
                        "frame {i}, detection {k}: unknown object {id}"
                    )));
                }
                Ok(Detection {
                    object_id: id,
                    class: d.object_class.clone(),
                    bbox: d.bbox,
                    contour: d.contour.iter().map(|c| Point2::new(c[0], c[1])).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let points = p
            .points
            .iter()
            .map(|r| {
                if r.id >= map.points.len() {
                    return Err(Error::Validation(format!(
                        "frame {i}: unknown point {}",
                        r.id
                    )));
                }
                Ok(PointMeasurement {
                    point_id: r.id,
                    pixel: Point2::new(r.px[0], r.px[1]),
                    depth: r.depth,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameData { detections, points });
    }
    let w2c = |t: &Trajectory| t.poses().iter().map(|p| p.inverse()).collect::<Vec<_>>();
    Ok(Dataset {
        name: meta.name,
        intrinsics: meta.intrinsics,
        width: meta.width,
        height: meta.height,
        seed: meta.seed,
        timestamps: gt.stamps().to_vec(),
        gt_poses: w2c(&gt),
        odometry: w2c(&odo),
        objects: map.objects,
        obbs: map.obbs,
        points: map.points,
        frames,
        dynamic: map.dynamic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn identity_line() {
        let t = parse_trajectory("1.0 0 0 0 0 0 0 1").unwrap();
        assert_eq!(t.stamps(), &[1.0]);
        assert_eq!(t.poses()[0], Isometry3::identity());
    }

    #[test]
    fn short_line_names_line_number() {
        let e = parse_trajectory("1.0 0 0").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_trajectory("# c\n\n1 0 0 0 0 0 0 1\n2 0 0 x 0 0 0 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }));
        assert!(e.to_string().contains("line 4"));
    }

    #[test]
    fn non_monotone_timestamps() {
        let e = parse_trajectory("2 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn quaternion_is_renormalized() {
        let t = parse_trajectory("0 1 2 3 0 0 0 2").unwrap();
        assert!((t.poses()[0].rotation.coords.norm() - 1.0).abs() < 1e-15);
        assert_eq!(t.poses()[0].translation.vector, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn observation_validation() {
        assert!(parse_observations("[]").unwrap().is_empty());
        let bad = r#"[{"frame_id":3,"timestamp":0.1,"detections":[
            {"object_class":"a","bbox":[0,0,1,1],"contour":[[0,0],[1,0],[1,1]]},
            {"object_class":"a","bbox":[0,0,1,1],"contour":[[0,0],[2,0],[1,1]]}]}]"#;
        let e = parse_observations(bad).unwrap_err().to_string();
        assert!(e.contains("frame 3") && e.contains("detection 1"), "{e}");
        let e = parse_observations("[\n{\"frame_id\": }]").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn config_errors_carry_lines() {
        #[derive(Deserialize, Debug)]
        #[allow(dead_code)]
        struct C {
            a: u32,
        }
        let e = parse_config::<C>("\n\na = \"x\"\n").unwrap_err();
        assert!(
            matches!(&e, Error::Config(m) if m.contains("line 3")),
            "{e}"
        );
    }
}
