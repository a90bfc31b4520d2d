//! `qbench`: generates synthetic suites, runs the constraint, simplification and integration
//! studies, and evaluates trajectories and maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use quadric_core::dataset_io::{
    read_config, read_json, read_observations, read_trajectory, write_dataset, write_json,
    write_trajectory, MapFile, MapObject,
};
use quadric_core::error::ErrorCategory;
use quadric_core::experiments::{
    ablate_constraints, ablation_table, evaluate_files, generate_suite, integration_ablation,
    integration_table, load_suite, sweep_simplification, sweep_table, CellRun, ExperimentConfig,
    SuiteSpec, Table,
};
use quadric_core::metrics::{AlignMode, Trajectory};
use quadric_core::scene_sim::Dataset;
use quadric_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "qbench",
    version,
    about = "Quadric object constraint benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config: a suite spec for `generate`, an experiment config otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for datasets, reports and estimates.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise seed for `generate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Print CSV instead of an aligned table.
    #[arg(long, global = true)]
    csv: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene suite into dataset directories.
    Generate,
    /// Full pipeline per constraint; ATE and SIoU per sequence.
    AblateConstraints { dataset: PathBuf },
    /// Plane-algebraic constraint on contour vs hull edges across simplification tolerances.
    SweepSimplification {
        dataset: PathBuf,
        /// Comma-separated tolerances in pixels, overriding the config.
        #[arg(long, value_delimiter = ',')]
        tolerances: Option<Vec<f64>>,
    },
    /// Point-only baseline, +JPE, +obj_BA and both.
    IntegrationAblation { dataset: PathBuf },
    /// ATE, SIoU and MTD of an estimate against reference files.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value = "se3")]
        mode: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("QC_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numerical => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Generate => generate(c),
        Command::AblateConstraints { dataset } => {
            let (cfg, suite) = study_inputs(c, dataset)?;
            let runs = ablate_constraints(&suite, &cfg, c.jobs)?;
            write_estimates(c, &suite, &runs)?;
            report(c, "ablate_constraints", &ablation_table(&runs))
        }
        Command::SweepSimplification {
            dataset,
            tolerances,
        } => {
            let (mut cfg, suite) = study_inputs(c, dataset)?;
            if let Some(t) = tolerances {
                cfg.sweep.tolerances = t.clone();
            }
            let runs = sweep_simplification(&suite, &cfg, c.jobs)?;
            report(c, "sweep_simplification", &sweep_table(&runs))
        }
        Command::IntegrationAblation { dataset } => {
            let (cfg, suite) = study_inputs(c, dataset)?;
            let runs = integration_ablation(&suite, &cfg, c.jobs)?;
            report(c, "integration_ablation", &integration_table(&runs))
        }
        Command::Eval {
            estimate,
            gt,
            map,
            observations,
            mode,
        } => {
            let mode: AlignMode = mode.parse()?;
            let est = read_trajectory(estimate)?;
            let gt = read_trajectory(gt)?;
            let map: MapFile = read_json(map)?;
            let frames = read_observations(observations)?;
            let r = evaluate_files(&est, &gt, &map, &frames, mode)?;
            report(c, "eval", &r.table())
        }
    }
}

fn generate(c: &Common) -> Result<()> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("generate needs --config <suite.toml>".into()))?;
    let out = c
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("generate needs --out <dir>".into()))?;
    let spec: SuiteSpec = read_config(path)?;
    let suite = generate_suite(&spec, c.seed, c.jobs)?;
    for ds in &suite {
        write_dataset(ds, &out.join(&ds.name))?;
        info!("wrote {}", out.join(&ds.name).display());
    }
    let mut used = spec.clone();
    if let Some(s) = c.seed {
        used.scene.seed = s;
    }
    let text = toml::to_string(&used)
        .map_err(|e| Error::Config(format!("cannot serialise suite: {e}")))?;
    write_text(&out.join("suite.toml"), &text)?;
    println!("{} datasets written to {}", suite.len(), out.display());
    Ok(())
}

fn study_inputs(c: &Common, dataset: &Path) -> Result<(ExperimentConfig, Vec<Dataset>)> {
    let cfg: ExperimentConfig = match &c.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    let suite = load_suite(dataset)?;
    Ok((cfg, suite))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Prints the table; with `--out`, also writes `<name>.txt` and `<name>.csv` there.
fn report(c: &Common, name: &str, table: &Table) -> Result<()> {
    let text = table.to_text();
    let csv = table.to_csv()?;
    print!("{}", if c.csv { &csv } else { &text });
    if let Some(out) = &c.out {
        write_text(&out.join(format!("{name}.txt")), &text)?;
        write_text(&out.join(format!("{name}.csv")), &csv)?;
    }
    Ok(())
}

/// With `--out`, stores each cell's trajectory and map per sequence for later `eval`.
fn write_estimates(c: &Common, suite: &[Dataset], runs: &[CellRun]) -> Result<()> {
    let Some(out) = &c.out else {
        return Ok(());
    };
    for cell in runs {
        for (ds, r) in suite.iter().zip(&cell.results) {
            let dir = out.join(&cell.label).join(&ds.name);
            fs::create_dir_all(&dir)
                .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
            write_trajectory(
                &Trajectory::from_world_to_camera(ds.timestamps.clone(), &r.poses)?,
                &dir.join("trajectory.txt"),
            )?;
            let objects = r
                .quadrics
                .iter()
                .enumerate()
                .filter_map(|(i, q)| {
                    (*q).map(|quadric| MapObject {
                        object_id: i,
                        quadric,
                    })
                })
                .collect();
            write_json(
                &MapFile {
                    intrinsics: ds.intrinsics,
                    objects,
                },
                &dir.join("map.json"),
            )?;
        }
    }
    Ok(())
}
