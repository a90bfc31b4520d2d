use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quadric_core::dataset_io::{read_dataset, write_json, MapFile, MapObject};

const SUITE: &str = r#"
name = "tiny"
layouts = [0, 1]
[scene]
frames = 10
[scene.objects]
count = 2
mix = "single"
[scene.points]
count = 40
[scene.noise]
pixel_sigma = 0.5
point_sigma = 0.5
depth_sigma = 0.01
pose_perturb = [0.005, 0.005]
"#;

fn qbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbench"))
        .args(args)
        .env("QC_LOG", "error")
        .output()
        .expect("qbench runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn generate(dir: &Path, seed: &str) -> std::path::PathBuf {
    fs::create_dir_all(dir).unwrap();
    let spec = dir.join("suite.toml");
    fs::write(&spec, SUITE).unwrap();
    let out = dir.join(format!("data{seed}"));
    let o = qbench(&[
        "generate",
        "--config",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        seed,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generate_is_deterministic_and_seed_changes_noise_only() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(tmp.path(), "1");
    let b = generate(&tmp.path().join("again"), "1");
    let c = generate(tmp.path(), "2");
    for f in [
        "groundtruth.txt",
        "observations.json",
        "points.json",
        "map_gt.json",
    ] {
        assert_eq!(
            fs::read(a.join("tiny_00").join(f)).unwrap(),
            fs::read(b.join("tiny_00").join(f)).unwrap(),
            "{f}"
        );
    }
    let same = |f: &str| {
        fs::read(a.join("tiny_00").join(f)).unwrap() == fs::read(c.join("tiny_00").join(f)).unwrap()
    };
    assert!(same("groundtruth.txt") && same("map_gt.json"));
    assert!(!same("observations.json") && !same("odometry.txt"));
}

#[test]
fn studies_report_tables_with_matching_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "0");
    let cfg = tmp.path().join("one.toml");
    fs::write(&cfg, "[[ablation]]\nname = \"plane-hull\"\n").unwrap();
    let out = tmp.path().join("out");
    let (d, c, o) = (
        data.to_str().unwrap(),
        cfg.to_str().unwrap(),
        out.to_str().unwrap(),
    );

    let r = qbench(&[
        "ablate-constraints",
        d,
        "--config",
        c,
        "--out",
        o,
        "--jobs",
        "1",
    ]);
    assert!(r.status.success());
    let text = fs::read_to_string(out.join("ablate_constraints.txt")).unwrap();
    let csv = fs::read_to_string(out.join("ablate_constraints.csv")).unwrap();
    assert_eq!(stdout(&r), text);
    // Single cell: header, rule and one row; CSV carries the same cells.
    assert_eq!(text.lines().count(), 3);
    let row: Vec<&str> = text.lines().nth(2).unwrap().split_whitespace().collect();
    assert_eq!(
        csv.lines().nth(1).unwrap().split(',').collect::<Vec<_>>(),
        row
    );

    let r = qbench(&[
        "sweep-simplification",
        d,
        "--tolerances",
        "0,3",
        "--csv",
        "--jobs",
        "1",
    ]);
    assert!(r.status.success());
    let sweep = stdout(&r);
    assert!(sweep.starts_with("sequence,metric,contour(0),contour(3),hull(0),hull(3)"));
    // Hull at tolerance 0 is the ablation's plane-hull cell.
    let avg_siou = sweep
        .lines()
        .find(|l| l.starts_with("average,SIoU"))
        .unwrap();
    assert_eq!(avg_siou.split(',').nth(4).unwrap(), row[row.len() - 3]);

    let r = qbench(&["integration-ablation", d, "--jobs", "1"]);
    assert!(r.status.success());
    let t = stdout(&r);
    for label in ["baseline", "+JPE", "+obj_BA", "+JPE +obj_BA"] {
        assert!(t.lines().any(|l| l.starts_with(label)), "{label}");
    }

    let est = out.join("plane-hull/tiny_00");
    let r = qbench(&[
        "eval",
        "--estimate",
        est.join("trajectory.txt").to_str().unwrap(),
        "--gt",
        data.join("tiny_00/groundtruth.txt").to_str().unwrap(),
        "--map",
        est.join("map.json").to_str().unwrap(),
        "--observations",
        data.join("tiny_00/observations.json").to_str().unwrap(),
        "--csv",
    ]);
    assert!(r.status.success());
    let line = stdout(&r).lines().nth(1).unwrap().to_string();
    let ate: f64 = line.split(',').next().unwrap().parse().unwrap();
    assert!(ate < 0.02, "{line}");
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "0");
    let seq = data.join("tiny_00");
    let ds = read_dataset(&seq).unwrap();
    let map = tmp.path().join("map.json");
    let objects = ds
        .objects
        .iter()
        .map(|o| MapObject {
            object_id: o.id,
            quadric: o.quadric,
        })
        .collect();
    write_json(
        &MapFile {
            intrinsics: ds.intrinsics,
            objects,
        },
        &map,
    )
    .unwrap();
    let gt = seq.join("groundtruth.txt");
    for mode in ["se3", "sim3"] {
        let r = qbench(&[
            "eval",
            "--estimate",
            gt.to_str().unwrap(),
            "--gt",
            gt.to_str().unwrap(),
            "--map",
            map.to_str().unwrap(),
            "--observations",
            seq.join("observations.json").to_str().unwrap(),
            "--mode",
            mode,
            "--csv",
        ]);
        assert!(r.status.success());
        let out = stdout(&r);
        let v: Vec<f64> = out
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert!(v[0] < 1e-6, "{out}");
        // Contours carry pixel noise, so SIoU and tangency are near but not at their optimum.
        assert!(v[1] > 0.9, "{out}");
        assert!(v[2] < 1e-3, "{out}");
    }
}

#[test]
fn exit_codes_follow_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let r = qbench(&[
        "generate",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let r = qbench(&["generate", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "ablation = []\n").unwrap();
    let r = qbench(&[
        "ablate-constraints",
        tmp.path().to_str().unwrap(),
        "--config",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    fs::write(&bad, "[[ablation]]\nname = \"plane-sphere\"\n").unwrap();
    let r = qbench(&[
        "ablate-constraints",
        tmp.path().to_str().unwrap(),
        "--config",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let r = qbench(&["integration-ablation", empty.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));

    let traj = tmp.path().join("t.txt");
    fs::write(&traj, "0 0 0 0 0 0 0\n").unwrap();
    let r = qbench(&[
        "eval",
        "--estimate",
        traj.to_str().unwrap(),
        "--gt",
        traj.to_str().unwrap(),
        "--map",
        missing.to_str().unwrap(),
        "--observations",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3));
}
