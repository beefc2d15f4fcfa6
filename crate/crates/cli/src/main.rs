//! `t2d`: batch experiments over synthetic multi-camera scenes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use temporal2d::experiments::{
    self, band_label, distance_band, prepare, select_subjects, ExperimentConfig, ObjectRow,
    Summary, Workload, RESULTS_VERSION,
};
use temporal2d::simworld::{self, LABELS_VERSION, SCENE_VERSION};
use temporal2d::SupervisionSpec;

#[derive(Parser, Debug)]
#[command(name = "t2d", version, about = "Temporal 2D supervision experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the number of objects in the scene.
    #[arg(long, global = true)]
    n_objects: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write scene.json and labels.json.
    Generate,
    /// Recover every object under each offset set of the sweep grid.
    SweepIntervals,
    /// Mix 3D and 2D supervision over ratios and split modes.
    Hybrid,
    /// Recover once and aggregate errors by distance, class and motion.
    Stratify,
    /// Loss profiles along a direction through the true box.
    Probe,
    /// Randomized invariant checks.
    Check,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::SweepIntervals => "sweep-intervals",
            Command::Hybrid => "hybrid",
            Command::Stratify => "stratify",
            Command::Probe => "probe",
            Command::Check => "check",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    crate_version: &'a str,
    results_version: u32,
    scene_version: u32,
    labels_version: u32,
    outputs: Vec<String>,
    row_errors: usize,
    config: &'a ExperimentConfig,
}

/// Float cell with 9 significant digits.
fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn offsets_str(o: &[i32]) -> String {
    o.iter().map(i32::to_string).collect::<Vec<_>>().join(";")
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_json(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(n) = cli.n_objects {
        cfg.scene.n_objects = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        let mut h = vec!["version"];
        h.extend_from_slice(header);
        Self {
            header: h,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, cells: Vec<String>) {
        let mut row = vec![RESULTS_VERSION.to_string()];
        row.extend(cells);
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

const OBJECT_COLUMNS: [&str; 20] = [
    "track_id",
    "class",
    "moving",
    "speed",
    "frame",
    "view_id",
    "distance",
    "distance_band",
    "image_area",
    "supervision_3d",
    "ate",
    "ate_bev",
    "ase",
    "aoe",
    "depth_error",
    "initial_depth_error",
    "initial_loss",
    "final_loss",
    "iterations",
    "error",
];

fn object_cells(r: &ObjectRow) -> Vec<String> {
    let s = &r.subject;
    let mut c = vec![
        s.track_id.to_string(),
        s.class.as_str().to_string(),
        s.moving.to_string(),
        num(s.speed),
        s.frame.to_string(),
        s.view_id.clone(),
        num(s.distance),
        distance_band(s.distance)
            .map(band_label)
            .unwrap_or_default(),
        num(s.image_area),
        r.supervision_3d.to_string(),
    ];
    match &r.outcome {
        Ok(v) => {
            c.extend(
                [
                    v.metrics.ate,
                    v.metrics.ate_bev,
                    v.metrics.ase,
                    v.metrics.aoe,
                    v.depth_error,
                    v.initial_depth_error,
                    v.initial_loss,
                    v.final_loss,
                ]
                .map(num),
            );
            c.push(v.iterations.to_string());
            c.push(String::new());
        }
        Err(e) => {
            c.extend(std::iter::repeat(String::new()).take(9));
            c.push(e.clone());
        }
    }
    c
}

const SUMMARY_COLUMNS: [&str; 10] = [
    "n",
    "n_failed",
    "median_ate",
    "mean_ate",
    "median_ate_bev",
    "median_ase",
    "median_aoe",
    "median_depth_error",
    "median_initial_depth_error",
    "median_final_loss",
];

fn summary_cells(s: &Summary) -> Vec<String> {
    let mut c = vec![s.n.to_string(), s.n_failed.to_string()];
    c.extend(
        [
            s.median_ate,
            s.mean_ate,
            s.median_ate_bev,
            s.median_ase,
            s.median_aoe,
            s.median_depth_error,
            s.median_initial_depth_error,
            s.median_final_loss,
        ]
        .map(num),
    );
    c
}

fn columns(prefix: &[&'static str], rest: &[&'static str]) -> Vec<&'static str> {
    prefix.iter().chain(rest).copied().collect()
}

/// Files written and the number of row-level errors.
struct Outcome {
    outputs: Vec<String>,
    row_errors: usize,
}

fn base_spec(cfg: &ExperimentConfig) -> SupervisionSpec {
    cfg.recovery.spec.clone()
}

fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (scene, exact, _) = prepare(cfg)?;
    simworld::save_scene(&scene, &out.join("scene.json"))?;
    simworld::save_labels(&exact, &out.join("labels.json"))?;
    let n_labels: usize = exact
        .frames
        .iter()
        .flat_map(|f| &f.views)
        .map(|v| v.objects.len())
        .sum();
    let n_moving = scene.tracks.iter().filter(|t| t.is_moving()).count();
    println!(
        "keyframes {}  views {}  objects {} ({} moving)  labels {}",
        scene.frames.len(),
        scene.config.rig.cameras.len(),
        scene.tracks.len(),
        n_moving,
        n_labels
    );
    Ok(Outcome {
        outputs: vec!["scene.json".into(), "labels.json".into()],
        row_errors: 0,
    })
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (scene, exact, sup) = prepare(cfg)?;
    let subjects = select_subjects(&scene, &exact, &cfg.population);
    let w = Workload {
        scene: &scene,
        labels: &sup,
        recovery: &cfg.recovery,
        init: &cfg.init,
        seed: cfg.seed,
    };
    let mut rows = experiments::sweep_intervals(&w, &subjects, &cfg.sweep.grid, &base_spec(cfg))?;
    let grid_index = |o: &[i32]| {
        cfg.sweep.grid.iter().position(|g| {
            let mut g = g.clone();
            g.sort_unstable();
            g.dedup();
            g == o
        })
    };
    rows.sort_by_key(|r| {
        (
            grid_index(&r.offsets),
            r.offsets.clone(),
            r.row.subject.track_id,
        )
    });

    let mut objects = Table::new(&columns(&["offsets"], &OBJECT_COLUMNS));
    let mut errors = 0;
    for r in &rows {
        errors += usize::from(r.row.outcome.is_err());
        let mut c = vec![offsets_str(&r.offsets)];
        c.extend(object_cells(&r.row));
        objects.push(c);
    }
    objects.write(&out.join("sweep_objects.csv"))?;

    let mut summary = Table::new(&columns(&["offsets", "stratum"], &SUMMARY_COLUMNS));
    for s in experiments::sweep_summaries(&rows) {
        println!(
            "offsets {:<10} {:<10} n {:>4}  median ATE {:.4} m  median depth error {:.4}",
            offsets_str(&s.offsets),
            s.stratum,
            s.summary.n,
            s.summary.median_ate,
            s.summary.median_depth_error
        );
        let mut c = vec![offsets_str(&s.offsets), s.stratum.to_string()];
        c.extend(summary_cells(&s.summary));
        summary.push(c);
    }
    summary.write(&out.join("sweep_summary.csv"))?;
    Ok(Outcome {
        outputs: vec!["sweep_objects.csv".into(), "sweep_summary.csv".into()],
        row_errors: errors,
    })
}

fn cmd_hybrid(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (scene, exact, sup) = prepare(cfg)?;
    let subjects = select_subjects(&scene, &exact, &cfg.population);
    let w = Workload {
        scene: &scene,
        labels: &sup,
        recovery: &cfg.recovery,
        init: &cfg.init,
        seed: cfg.seed,
    };
    let mut cells = experiments::hybrid(&w, &subjects, &cfg.hybrid, &base_spec(cfg))?;
    cells.sort_by(|a, b| a.mode.cmp(&b.mode).then(a.ratio.total_cmp(&b.ratio)));

    let mut objects = Table::new(&columns(&["split_mode", "ratio"], &OBJECT_COLUMNS));
    let mut summary = Table::new(&columns(&["split_mode", "ratio", "n_3d"], &SUMMARY_COLUMNS));
    let mut errors = 0;
    for cell in &cells {
        for r in &cell.rows {
            errors += usize::from(r.outcome.is_err());
            let mut c = vec![cell.mode.as_str().to_string(), num(cell.ratio)];
            c.extend(object_cells(r));
            objects.push(c);
        }
        println!(
            "{:<16} ratio {:.2}  3D {:>4}/{:<4} median ATE {:.4} m",
            cell.mode.as_str(),
            cell.ratio,
            cell.n_3d,
            cell.rows.len(),
            cell.summary.median_ate
        );
        let mut c = vec![
            cell.mode.as_str().to_string(),
            num(cell.ratio),
            cell.n_3d.to_string(),
        ];
        c.extend(summary_cells(&cell.summary));
        summary.push(c);
    }
    objects.write(&out.join("hybrid_objects.csv"))?;
    summary.write(&out.join("hybrid_summary.csv"))?;
    Ok(Outcome {
        outputs: vec!["hybrid_objects.csv".into(), "hybrid_summary.csv".into()],
        row_errors: errors,
    })
}

fn cmd_stratify(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (scene, exact, sup) = prepare(cfg)?;
    let subjects = select_subjects(&scene, &exact, &cfg.population);
    let w = Workload {
        scene: &scene,
        labels: &sup,
        recovery: &cfg.recovery,
        init: &cfg.init,
        seed: cfg.seed,
    };
    let spec = SupervisionSpec {
        offsets: cfg.stratify.offsets.clone(),
        ..base_spec(cfg)
    };
    let mut spec = spec;
    spec.normalize()?;
    let mut rows = experiments::run_population(&w, &subjects, &spec, &vec![false; subjects.len()]);
    rows.sort_by_key(|r| r.subject.track_id);

    let mut objects = Table::new(&columns(&["offsets"], &OBJECT_COLUMNS));
    let mut errors = 0;
    for r in &rows {
        errors += usize::from(r.outcome.is_err());
        let mut c = vec![offsets_str(&spec.offsets)];
        c.extend(object_cells(r));
        objects.push(c);
    }
    objects.write(&out.join("stratify_objects.csv"))?;

    let mut summary = Table::new(&columns(&["offsets", "kind", "label"], &SUMMARY_COLUMNS));
    for s in experiments::stratify(&rows) {
        println!(
            "{:<9} {:<11} n {:>4}  median ATE {:.4} m",
            s.kind, s.label, s.summary.n, s.summary.median_ate
        );
        let mut c = vec![
            offsets_str(&spec.offsets),
            s.kind.to_string(),
            s.label.clone(),
        ];
        c.extend(summary_cells(&s.summary));
        summary.push(c);
    }
    summary.write(&out.join("stratify_summary.csv"))?;
    Ok(Outcome {
        outputs: vec!["stratify_objects.csv".into(), "stratify_summary.csv".into()],
        row_errors: errors,
    })
}

fn cmd_probe(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let (scene, exact, sup) = prepare(cfg)?;
    let subjects = select_subjects(&scene, &exact, &cfg.population);
    let w = Workload {
        scene: &scene,
        labels: &sup,
        recovery: &cfg.recovery,
        init: &cfg.init,
        seed: cfg.seed,
    };
    let mut profiles = experiments::probe(&w, &subjects, &cfg.probe, &base_spec(cfg))?;
    profiles.sort_by_key(|p| p.subject.track_id);

    let offsets = offsets_str(&cfg.probe.offsets);
    let mut samples = Table::new(&[
        "offsets", "track_id", "class", "moving", "distance", "step", "loss", "error",
    ]);
    let mut summary = Table::new(&[
        "offsets",
        "track_id",
        "class",
        "moving",
        "distance",
        "min_loss",
        "max_loss",
        "relative_variation",
        "error",
    ]);
    let mut errors = 0;
    for p in &profiles {
        let s = &p.subject;
        let head = vec![
            offsets.clone(),
            s.track_id.to_string(),
            s.class.as_str().to_string(),
            s.moving.to_string(),
            num(s.distance),
        ];
        match &p.outcome {
            Ok(profile) => {
                for (step, loss) in profile {
                    let mut c = head.clone();
                    c.extend([num(*step), num(*loss), String::new()]);
                    samples.push(c);
                }
                let (lo, hi) = profile
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
                        (lo.min(*v), hi.max(*v))
                    });
                let mut c = head;
                c.extend([
                    num(lo),
                    num(hi),
                    num(p.relative_variation().unwrap_or(f64::NAN)),
                    String::new(),
                ]);
                summary.push(c);
            }
            Err(e) => {
                errors += 1;
                let mut c = head;
                c.extend([String::new(), String::new(), String::new(), e.clone()]);
                summary.push(c);
            }
        }
    }
    samples.write(&out.join("probe_samples.csv"))?;
    summary.write(&out.join("probe_summary.csv"))?;
    println!("probed {} objects, {} failed", profiles.len(), errors);
    Ok(Outcome {
        outputs: vec!["probe_samples.csv".into(), "probe_summary.csv".into()],
        row_errors: errors,
    })
}

fn cmd_check(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let results = experiments::run_checks(cfg.seed, cfg.check.cases)?;
    let mut t = Table::new(&[
        "name",
        "cases",
        "failures",
        "max_error",
        "tolerance",
        "passed",
    ]);
    let mut failed = 0;
    for r in &results {
        failed += usize::from(!r.passed());
        println!(
            "{} {:<24} cases {:>6}  failures {:>4}  max error {:.3e} (tol {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.failures,
            r.max_error,
            r.tolerance
        );
        t.push(vec![
            r.name.to_string(),
            r.cases.to_string(),
            r.failures.to_string(),
            num(r.max_error),
            num(r.tolerance),
            r.passed().to_string(),
        ]);
    }
    t.write(&out.join("check.csv"))?;
    Ok(Outcome {
        outputs: vec!["check.csv".into()],
        row_errors: failed,
    })
}

fn run(cli: &Cli) -> Result<usize> {
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()?;
    let out = cli.out.as_path();
    let outcome = pool.install(|| match cli.command {
        Command::Generate => cmd_generate(&cfg, out),
        Command::SweepIntervals => cmd_sweep(&cfg, out),
        Command::Hybrid => cmd_hybrid(&cfg, out),
        Command::Stratify => cmd_stratify(&cfg, out),
        Command::Probe => cmd_probe(&cfg, out),
        Command::Check => cmd_check(&cfg, out),
    })?;
    let manifest = Manifest {
        command: cli.command.name(),
        seed: cfg.seed,
        config_sha256: config_hash(&cfg)?,
        crate_version: env!("CARGO_PKG_VERSION"),
        results_version: RESULTS_VERSION,
        scene_version: SCENE_VERSION,
        labels_version: LABELS_VERSION,
        outputs: outcome.outputs,
        row_errors: outcome.row_errors,
        config: &cfg,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(outcome.row_errors)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("t2d: {n} row-level errors");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("t2d: {e:#}");
            ExitCode::from(2)
        }
    }
}
