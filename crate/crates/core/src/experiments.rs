//! Experiment runners: constraint ablation, simplification sweep and integration ablation
//! over a suite of datasets, plus the file-based metric report.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSpec, Observation};
use crate::dataset_io::{read_dataset, FrameRecord, MapFile, META_FILE};
use crate::error::{Error, Result};
use crate::estimation::NoiseModel;
use crate::hull::Contour2D;
use crate::metrics::{ate_rmse, AlignMode, Trajectory};
use crate::par;
use crate::pipeline::{evaluate_frames, run_sequence, PipelineConfig, RunOptions, SequenceResult};
use crate::scene_sim::{render_observations, Dataset, Detection, FrameData, SceneSpec};

/// A family of scenes sharing one template and differing in layout seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub name: String,
    /// Layout seeds; empty means the template's own `layout_seed`.
    pub layouts: Vec<u64>,
    pub scene: SceneSpec,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            name: "suite".into(),
            layouts: Vec::new(),
            scene: SceneSpec::default(),
        }
    }
}

impl SuiteSpec {
    /// One scene per layout. Noise seeds are `seed + layout`, where `seed` defaults to the
    /// template's; changing it alters noise only.
    pub fn scenes(&self, seed: Option<u64>) -> Result<Vec<SceneSpec>> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid suite name '{}'", self.name)));
        }
        let layouts = if self.layouts.is_empty() {
            vec![self.scene.layout_seed]
        } else {
            self.layouts.clone()
        };
        let base = seed.unwrap_or(self.scene.seed);
        layouts
            .iter()
            .map(|&l| {
                let mut s = self.scene.clone();
                s.name = format!("{}_{l:02}", self.name);
                s.layout_seed = l;
                s.seed = base.wrapping_add(l);
                s.validate()?;
                Ok(s)
            })
            .collect()
    }
}

/// Renders every scene of a suite on `jobs` workers.
pub fn generate_suite(spec: &SuiteSpec, seed: Option<u64>, jobs: usize) -> Result<Vec<Dataset>> {
    let scenes = spec.scenes(seed)?;
    par::with_jobs(jobs, || par::map(&scenes, render_observations))
        .into_iter()
        .collect()
}

/// Loads one dataset directory, or every dataset subdirectory in name order.
pub fn load_suite(dir: &Path) -> Result<Vec<Dataset>> {
    if dir.join(META_FILE).is_file() {
        return Ok(vec![read_dataset(dir)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!(
            "{} holds no dataset",
            dir.display()
        )));
    }
    dirs.iter().map(|d| read_dataset(d)).collect()
}

/// One constraint cell of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSpec {
    /// `term-primitive`, e.g. `plane-hull`.
    pub name: String,
    /// Simplification tolerance in pixels.
    pub tol: f64,
    pub max_edges: usize,
    /// Object-term standard deviation; calibrated on the suite when absent.
    pub sigma: Option<f64>,
}

impl Default for CellSpec {
    fn default() -> Self {
        Self {
            name: "plane-hull".into(),
            tol: 0.0,
            max_edges: 0,
            sigma: None,
        }
    }
}

impl CellSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn constraint(&self) -> Result<ConstraintSpec> {
        ConstraintSpec::parse(&self.name, self.tol, self.max_edges)
    }

    pub fn label(&self) -> String {
        if self.tol > 0.0 || self.max_edges > 0 {
            format!("{}({})", self.name, self.tol)
        } else {
            self.name.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub tolerances: Vec<f64>,
    pub max_edges: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tolerances: vec![0.0, 3.0, 6.0],
            max_edges: 0,
        }
    }
}

/// Settings shared by every study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    /// Pixel standard deviation of point features.
    pub point_sigma: f64,
    /// Relative depth standard deviation; absent for monocular runs.
    pub depth_sigma: Option<f64>,
    pub ablation: Vec<CellSpec>,
    pub sweep: SweepConfig,
    pub integration: CellSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            point_sigma: 1.0,
            depth_sigma: Some(0.01),
            ablation: [
                "plane-hull",
                "overlap-bbox",
                "distribution-conic",
                "point-contour",
            ]
            .into_iter()
            .map(CellSpec::named)
            .collect(),
            sweep: SweepConfig::default(),
            integration: CellSpec::named("plane-hull"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.noise(1.0)?;
        if self.ablation.is_empty() {
            return Err(Error::Config(
                "ablation needs at least one constraint".into(),
            ));
        }
        for c in self.ablation.iter().chain([&self.integration]) {
            c.constraint()?;
            if let Some(s) = c.sigma {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Config(format!(
                        "sigma of {} must be positive",
                        c.name
                    )));
                }
            }
        }
        if self.sweep.tolerances.is_empty() {
            return Err(Error::Config("sweep needs at least one tolerance".into()));
        }
        if self
            .sweep
            .tolerances
            .iter()
            .any(|t| !(*t >= 0.0 && t.is_finite()))
        {
            return Err(Error::Config("sweep tolerances must be >= 0".into()));
        }
        Ok(())
    }

    fn noise(&self, object_sigma: f64) -> Result<NoiseModel> {
        let n = NoiseModel::new(self.point_sigma, object_sigma)?;
        match self.depth_sigma {
            Some(d) => n.with_depth(d),
            None => Ok(n),
        }
    }

    fn options(
        &self,
        datasets: &[Dataset],
        cell: &CellSpec,
        jpe: bool,
        obj_ba: bool,
    ) -> Result<RunOptions> {
        let constraint = cell.constraint()?;
        let sigma = match cell.sigma {
            Some(s) => s,
            None => calibrate_sigma(datasets, &constraint)?,
        };
        Ok(RunOptions {
            constraint,
            noise: self.noise(sigma)?,
            jpe,
            obj_ba,
        })
    }
}

/// RMS of the constraint's residual rows at ground truth over every detection of the suite.
///
/// Serves as the object-term standard deviation, so that each constraint is weighted by its
/// own modelling error rather than by a shared hand-picked factor.
pub fn calibrate_sigma(datasets: &[Dataset], spec: &ConstraintSpec) -> Result<f64> {
    let mut sum = 0.0;
    let mut rows = 0usize;
    for ds in datasets {
        let rate = ds.frame_rate();
        for (k, frame) in ds.frames.iter().enumerate() {
            let objects = ds.objects_at(k, rate);
            let cam = ds.camera(ds.gt_poses[k]);
            for d in &frame.detections {
                let Ok(contour) = Contour2D::new(d.contour.clone()) else {
                    continue;
                };
                let Ok(obs) =
                    Observation::from_contour(k, d.object_id, contour, spec.tol, spec.max_edges)
                else {
                    continue;
                };
                let Ok(m) = spec.prepare(&obs) else {
                    continue;
                };
                if let Ok(v) = spec.values(&m, &objects[d.object_id].quadric, &cam) {
                    sum += v.norm_squared();
                    rows += v.len();
                }
            }
        }
    }
    let sigma = (sum / rows.max(1) as f64).sqrt();
    if rows == 0 || !(sigma > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "cannot calibrate {}: no residual rows at ground truth",
            spec.name()
        )));
    }
    Ok(sigma)
}

/// Per-sequence results of one cell.
#[derive(Clone, Debug)]
pub struct CellRun {
    pub label: String,
    pub object_sigma: f64,
    pub results: Vec<SequenceResult>,
}

impl CellRun {
    pub fn mean_ate(&self) -> f64 {
        mean(self.results.iter().map(|r| r.ate))
    }

    pub fn mean_siou(&self) -> f64 {
        mean(self.results.iter().map(|r| r.siou))
    }

    pub fn iterations(&self) -> usize {
        self.results.iter().map(|r| r.iterations).sum()
    }

    pub fn seconds(&self) -> f64 {
        self.results.iter().map(|r| r.seconds).sum()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs every (cell, sequence) pair on `jobs` workers.
pub fn run_cells(
    datasets: &[Dataset],
    cfg: &PipelineConfig,
    cells: &[(String, RunOptions)],
    jobs: usize,
) -> Result<Vec<CellRun>> {
    if datasets.is_empty() {
        return Err(Error::Validation("no datasets to run".into()));
    }
    let n = datasets.len();
    let runs = par::with_jobs(jobs, || {
        par::map_range(cells.len() * n, |i| {
            let (label, opts) = &cells[i / n];
            let ds = &datasets[i % n];
            let r = run_sequence(ds, cfg, opts);
            if let Ok(r) = &r {
                info!(
                    "{label} on {}: ATE {:.4} m, SIoU {:.3}",
                    ds.name, r.ate, r.siou
                );
            }
            r
        })
    });
    let mut runs = runs.into_iter();
    cells
        .iter()
        .map(|(label, opts)| {
            Ok(CellRun {
                label: label.clone(),
                object_sigma: opts.noise.object_sigma,
                results: runs.by_ref().take(n).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Full pipeline (JPE and object BA) for each configured constraint.
pub fn ablate_constraints(
    datasets: &[Dataset],
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<CellRun>> {
    cfg.validate()?;
    let cells = cfg
        .ablation
        .iter()
        .map(|c| Ok((c.label(), cfg.options(datasets, c, true, true)?)))
        .collect::<Result<Vec<_>>>()?;
    run_cells(datasets, &cfg.pipeline, &cells, jobs)
}

/// Plane-algebraic constraint on contour edges and on hull edges at each tolerance,
/// contour cells first.
pub fn sweep_simplification(
    datasets: &[Dataset],
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<CellRun>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for name in ["plane-contour", "plane-hull"] {
        for &tol in &cfg.sweep.tolerances {
            let cell = CellSpec {
                name: name.into(),
                tol,
                max_edges: cfg.sweep.max_edges,
                sigma: None,
            };
            let label = format!(
                "{}({tol})",
                if name == "plane-hull" {
                    "hull"
                } else {
                    "contour"
                }
            );
            cells.push((label, cfg.options(datasets, &cell, true, true)?));
        }
    }
    run_cells(datasets, &cfg.pipeline, &cells, jobs)
}

/// Row labels of the integration study, in report order.
pub const INTEGRATION_ROWS: [&str; 4] = ["baseline", "+JPE", "+obj_BA", "+JPE +obj_BA"];

/// Point-only baseline, then object terms in tracking, in BA, and in both.
pub fn integration_ablation(
    datasets: &[Dataset],
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<CellRun>> {
    cfg.validate()?;
    let flags = [(false, false), (true, false), (false, true), (true, true)];
    let cells = INTEGRATION_ROWS
        .iter()
        .zip(flags)
        .map(|(label, (jpe, oba))| {
            Ok((
                label.to_string(),
                cfg.options(datasets, &cfg.integration, jpe, oba)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    run_cells(datasets, &cfg.pipeline, &cells, jobs)
}

/// Pre-formatted table; text and CSV renderings share the same cell strings.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0usize; cols];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |row: &[String], out: &mut String| {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = width[i])
                    } else {
                        format!("{c:>w$}", w = width[i])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        };
        line(&self.header, &mut out);
        let rule: usize = width.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for r in &self.rows {
            line(r, &mut out);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Validation(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Validation(format!("csv: {e}")))
    }
}

fn cm(ate_m: f64) -> String {
    format!("{:.3}", ate_m * 100.0)
}

fn ratio(v: f64) -> String {
    format!("{v:.3}")
}

fn secs(v: f64) -> String {
    format!("{v:.2}")
}

fn sequences(runs: &[CellRun]) -> Vec<String> {
    runs.first()
        .map(|c| c.results.iter().map(|r| r.name.clone()).collect())
        .unwrap_or_default()
}

/// One row per cell: ATE (cm) and SIoU per sequence, averages, iterations and wall time.
pub fn ablation_table(runs: &[CellRun]) -> Table {
    let mut header = vec!["constraint".to_string()];
    for s in sequences(runs) {
        header.push(format!("{s} ATE[cm]"));
        header.push(format!("{s} SIoU"));
    }
    header.extend(["avg ATE[cm]", "avg SIoU", "iterations", "time[s]"].map(String::from));
    let rows = runs
        .iter()
        .map(|c| {
            let mut row = vec![c.label.clone()];
            for r in &c.results {
                row.push(cm(r.ate));
                row.push(ratio(r.siou));
            }
            row.extend([
                cm(c.mean_ate()),
                ratio(c.mean_siou()),
                c.iterations().to_string(),
                secs(c.seconds()),
            ]);
            row
        })
        .collect();
    Table { header, rows }
}

/// Sequences down, cells across: ATE and SIoU rows per sequence, then averages and cost.
pub fn sweep_table(runs: &[CellRun]) -> Table {
    let mut header = vec!["sequence".to_string(), "metric".to_string()];
    header.extend(runs.iter().map(|c| c.label.clone()));
    let mut rows = Vec::new();
    for (i, s) in sequences(runs).into_iter().enumerate() {
        let mut ate = vec![s.clone(), "ATE[cm]".into()];
        let mut si = vec![s, "SIoU".into()];
        for c in runs {
            ate.push(cm(c.results[i].ate));
            si.push(ratio(c.results[i].siou));
        }
        rows.push(ate);
        rows.push(si);
    }
    type Column = (&'static str, fn(&CellRun) -> String);
    let summary: [Column; 4] = [
        ("ATE[cm]", |c| cm(c.mean_ate())),
        ("SIoU", |c| ratio(c.mean_siou())),
        ("iterations", |c| c.iterations().to_string()),
        ("time[s]", |c| secs(c.seconds())),
    ];
    for (metric, f) in summary {
        let mut row = vec!["average".to_string(), metric.to_string()];
        if metric == "iterations" || metric == "time[s]" {
            row[0] = "total".into();
        }
        row.extend(runs.iter().map(f));
        rows.push(row);
    }
    Table { header, rows }
}

/// One row per configuration: ATE (cm) per sequence, average, iterations and wall time.
pub fn integration_table(runs: &[CellRun]) -> Table {
    let mut header = vec!["configuration".to_string()];
    header.extend(sequences(runs).into_iter().map(|s| format!("{s} ATE[cm]")));
    header.extend(["avg ATE[cm]", "iterations", "time[s]"].map(String::from));
    let rows = runs
        .iter()
        .map(|c| {
            let mut row = vec![c.label.clone()];
            row.extend(c.results.iter().map(|r| cm(r.ate)));
            row.extend([
                cm(c.mean_ate()),
                c.iterations().to_string(),
                secs(c.seconds()),
            ]);
            row
        })
        .collect();
    Table { header, rows }
}

/// Metrics of an estimated trajectory and map against reference files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub ate: f64,
    pub siou: f64,
    pub mtd: Option<f64>,
}

impl EvalReport {
    pub fn table(&self) -> Table {
        Table {
            header: ["ATE[m]", "SIoU", "MTD"].map(String::from).to_vec(),
            rows: vec![vec![
                format!("{:.6}", self.ate),
                format!("{:.4}", self.siou),
                self.mtd.map_or("n/a".into(), |m| format!("{m:.6e}")),
            ]],
        }
    }
}

/// ATE of `estimate` against `ground_truth`, and SIoU/MTD of `map` over `frames`, posed by
/// the estimate at each frame's timestamp.
pub fn evaluate_files(
    estimate: &Trajectory,
    ground_truth: &Trajectory,
    map: &MapFile,
    frames: &[FrameRecord],
    mode: AlignMode,
) -> Result<EvalReport> {
    let ate = ate_rmse(estimate, ground_truth, mode)?.rmse;
    let n = map
        .objects
        .iter()
        .map(|o| o.object_id + 1)
        .max()
        .unwrap_or(0);
    let mut quadrics = vec![None; n];
    for o in &map.objects {
        quadrics[o.object_id] = Some(o.quadric);
    }
    let mut data = Vec::with_capacity(frames.len());
    let mut poses = Vec::with_capacity(frames.len());
    for f in frames {
        let j = estimate.nearest(f.timestamp).ok_or_else(|| {
            Error::Validation(format!(
                "no estimated pose near frame {} (t = {})",
                f.frame_id, f.timestamp
            ))
        })?;
        poses.push(estimate.poses()[j].inverse());
        let detections = f
            .detections
            .iter()
            .map(|d| Detection {
                // Unassociated detections count as unmapped.
                object_id: d.object_id_gt.unwrap_or(usize::MAX),
                class: d.object_class.clone(),
                bbox: d.bbox,
                contour: d.contour.iter().map(|c| Point2::new(c[0], c[1])).collect(),
            })
            .collect();
        data.push(FrameData {
            detections,
            points: Vec::new(),
        });
    }
    let (siou, mtd) = evaluate_frames(&map.intrinsics, &data, &poses, &quadrics)?;
    Ok(EvalReport { ate, siou, mtd })
}
