//! Desk-scale experiment drivers.
//!
//! Every driver works on a population of [`Subject`]s drawn from a
//! generated scene: one object, the keyframe it is recovered at, and the
//! camera that sees it best there. Recoveries are independent per object;
//! each draws its own RNG stream from `(seed, track_id)`, so results do not
//! depend on scheduling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{corners3d, deduce_box2d, giou2d, iou2d, project_point, Box2D, Box3D, Size3};
use crate::error::{Error, Result};
use crate::geometry::{AxisConvention, Pose};
use crate::recovery::{
    ambiguity_probe, depth_ray_direction, eval_metrics, recover_box, relative_variation, Basin,
    InitStrategy, Metrics, RecoveryConfig,
};
use crate::simworld::{
    generate_scene, jitter_labels, render_labels, ObjectLabel, PseudoClass, Scene, SceneConfig,
    SceneLabels,
};
use crate::supervision::{SupervisionSpec, TemporalLoss};
use crate::warp::{homography, warp_box};

/// Version of the row layouts produced here.
pub const RESULTS_VERSION: u32 = 1;

/// Ground-distance bands in meters.
pub const DISTANCE_BANDS: [[f64; 2]; 5] = [
    [2.0, 10.0],
    [10.0, 20.0],
    [20.0, 30.0],
    [30.0, 45.0],
    [45.0, 59.0],
];

const JITTER_SEED_SALT: u64 = 0x6a09_e667_f3bc_c909;
const OBJECT_STREAM_BASE: u64 = 1 << 32;

/// Index into [`DISTANCE_BANDS`]; bands are half-open except the last.
pub fn distance_band(d: f64) -> Option<usize> {
    let last = DISTANCE_BANDS.len() - 1;
    DISTANCE_BANDS.iter().position(|[lo, hi]| d >= *lo && d < *hi).or_else(|| {
        let [lo, hi] = DISTANCE_BANDS[last];
        (d >= lo && d <= hi).then_some(last)
    })
}

pub fn band_label(band: usize) -> String {
    let [lo, hi] = DISTANCE_BANDS[band];
    format!("{lo}-{hi}")
}

/// RNG for one object, independent of every other object's.
pub fn object_rng(seed: u64, track_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(OBJECT_STREAM_BASE + track_id as u64);
    rng
}

pub fn jitter_seed(seed: u64) -> u64 {
    seed ^ JITTER_SEED_SALT
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFilter {
    #[default]
    All,
    Stationary,
    Moving,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationFilter {
    pub motion: MotionFilter,
    /// Ground distance at the recovery keyframe, `[min, max]` meters.
    pub distance: Option<[f64; 2]>,
    /// Empty keeps every class.
    pub classes: Vec<PseudoClass>,
    /// Keep the first `n` subjects in track order.
    pub max_objects: Option<usize>,
}

/// Where each recovery starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitMode {
    /// Random perturbation of the ground truth.
    Basin(Basin),
    /// Back-projection of the anchor label to `depth_prior` with the
    /// nominal class size.
    FromLabel { depth_prior: f64 },
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::Basin(Basin::default())
    }
}

/// One object to recover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub track_id: u32,
    pub class: PseudoClass,
    pub moving: bool,
    pub speed: f64,
    pub frame: usize,
    pub view_id: String,
    /// Ground distance at `frame`, meters.
    pub distance: f64,
    /// Clipped 2D label area in `view_id`, px².
    pub image_area: f64,
    pub gt: Box3D,
}

/// Picks, for every track passing `filter`, its anchor keyframe and the
/// view with the largest clipped label there. Tracks unseen at their
/// anchor keyframe are skipped.
pub fn select_subjects(scene: &Scene, exact: &SceneLabels, filter: &PopulationFilter) -> Vec<Subject> {
    let k = scene.config.rig.intrinsics;
    let area = |o: &ObjectLabel| o.box2d.clip_to_image(&k).map_or(0.0, |b| b.area());
    let mut out = Vec::new();
    for tr in &scene.tracks {
        let moving = tr.is_moving();
        match filter.motion {
            MotionFilter::Stationary if moving => continue,
            MotionFilter::Moving if !moving => continue,
            _ => {}
        }
        if !filter.classes.is_empty() && !filter.classes.contains(&tr.class) {
            continue;
        }
        let frame = tr.anchor_frame;
        let distance = scene.ground_distance(tr, frame);
        if let Some([lo, hi]) = filter.distance {
            if !(distance >= lo && distance <= hi) {
                continue;
            }
        }
        let obs = exact.observations(frame, tr.track_id);
        let best = obs
            .iter()
            .map(|(v, o)| (*v, area(o), o.box3d))
            .fold(None, |acc: Option<(&str, f64, Box3D)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        let Some((view, image_area, gt)) = best else {
            continue;
        };
        out.push(Subject {
            track_id: tr.track_id,
            class: tr.class,
            moving,
            speed: tr.speed(),
            frame,
            view_id: view.to_string(),
            distance,
            image_area,
            gt,
        });
        if filter.max_objects.is_some_and(|n| out.len() >= n) {
            break;
        }
    }
    out
}

/// Shared inputs of a population run.
pub struct Workload<'a> {
    pub scene: &'a Scene,
    /// Supervision labels, possibly jittered.
    pub labels: &'a SceneLabels,
    pub recovery: &'a RecoveryConfig,
    pub init: &'a InitMode,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovered {
    pub metrics: Metrics,
    /// `|z_est - z_gt| / z_gt` in the subject's camera.
    pub depth_error: f64,
    pub initial_depth_error: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRow {
    pub subject: Subject,
    pub supervision_3d: bool,
    pub outcome: std::result::Result<Recovered, String>,
}

impl ObjectRow {
    pub fn ok(&self) -> Option<&Recovered> {
        self.outcome.as_ref().ok()
    }
}

fn depth_error(est: &Box3D, gt: &Box3D) -> f64 {
    (est.center.z - gt.center.z).abs() / gt.center.z.abs()
}

fn initial_box(w: &Workload, s: &Subject) -> Result<InitStrategy> {
    Ok(match w.init {
        InitMode::Basin(basin) => {
            let mut rng = object_rng(w.seed, s.track_id);
            InitStrategy::Explicit {
                box3d: basin.sample(&s.gt, &mut rng),
            }
        }
        InitMode::FromLabel { depth_prior } => {
            let size = w
                .scene
                .config
                .classes
                .iter()
                .find(|c| c.class == s.class)
                .map(|c| c.size)
                .ok_or_else(|| Error::Config(format!("no class spec for {}", s.class.as_str())))?;
            InitStrategy::FromLabel {
                size_prior: size,
                depth_prior: *depth_prior,
            }
        }
    })
}

/// Recovers one subject under `spec`, with its exact 3D box attached when
/// `with_3d` is set.
pub fn recover_subject(
    w: &Workload,
    s: &Subject,
    spec: &SupervisionSpec,
    with_3d: bool,
) -> Result<Recovered> {
    let labels = w
        .labels
        .labeled_object(s.track_id, s.frame, &s.view_id, &spec.offsets, with_3d);
    let cfg = RecoveryConfig {
        init: initial_box(w, s)?,
        spec: spec.clone(),
        ..w.recovery.clone()
    };
    let r = recover_box(&labels, w.scene.trajectory(), &cfg, Some(&s.gt))?;
    Ok(Recovered {
        metrics: eval_metrics(&r.estimate, &s.gt),
        depth_error: depth_error(&r.estimate, &s.gt),
        initial_depth_error: depth_error(&r.initial, &s.gt),
        initial_loss: r.initial_loss,
        final_loss: r.final_loss,
        iterations: r.iterations,
    })
}

/// Recovers every subject in parallel; row order follows `subjects`.
pub fn run_population(
    w: &Workload,
    subjects: &[Subject],
    spec: &SupervisionSpec,
    with_3d: &[bool],
) -> Vec<ObjectRow> {
    subjects
        .par_iter()
        .zip(with_3d.par_iter())
        .map(|(s, &three_d)| ObjectRow {
            subject: s.clone(),
            supervision_3d: three_d,
            outcome: recover_subject(w, s, spec, three_d).map_err(|e| e.to_string()),
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Aggregate errors over a set of rows; failed rows are only counted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub n_failed: usize,
    pub median_ate: f64,
    pub mean_ate: f64,
    pub median_ate_bev: f64,
    pub median_ase: f64,
    pub median_aoe: f64,
    pub median_depth_error: f64,
    pub median_initial_depth_error: f64,
    pub median_final_loss: f64,
}

impl Summary {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a ObjectRow>) -> Self {
        let mut n_failed = 0;
        let mut ok = Vec::new();
        for r in rows {
            match r.ok() {
                Some(v) => ok.push(*v),
                None => n_failed += 1,
            }
        }
        let col = |f: fn(&Recovered) -> f64| ok.iter().map(f).collect::<Vec<_>>();
        Summary {
            n: ok.len(),
            n_failed,
            median_ate: median(col(|r| r.metrics.ate)),
            mean_ate: mean(&col(|r| r.metrics.ate)),
            median_ate_bev: median(col(|r| r.metrics.ate_bev)),
            median_ase: median(col(|r| r.metrics.ase)),
            median_aoe: median(col(|r| r.metrics.aoe)),
            median_depth_error: median(col(|r| r.depth_error)),
            median_initial_depth_error: median(col(|r| r.initial_depth_error)),
            median_final_loss: median(col(|r| r.final_loss)),
        }
    }
}

/// Builds the scene, its exact labels and the supervision labels.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(Scene, SceneLabels, SceneLabels)> {
    let scene = generate_scene(&cfg.scene_config())?;
    let exact = render_labels(&scene);
    let sup = jitter_labels(&exact, cfg.jitter, jitter_seed(cfg.seed))?;
    Ok((scene, exact, sup))
}

// ---------------------------------------------------------------------------
// Interval sweep

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub offsets: Vec<i32>,
    pub row: ObjectRow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub offsets: Vec<i32>,
    /// `all`, `stationary` or `moving`
    pub stratum: &'static str,
    pub summary: Summary,
}

pub fn sweep_intervals(
    w: &Workload,
    subjects: &[Subject],
    grid: &[Vec<i32>],
    base: &SupervisionSpec,
) -> Result<Vec<SweepRow>> {
    let mut out = Vec::new();
    let none = vec![false; subjects.len()];
    for offsets in grid {
        let spec = SupervisionSpec {
            offsets: offsets.clone(),
            ..base.clone()
        };
        let mut spec = spec;
        spec.normalize()?;
        for row in run_population(w, subjects, &spec, &none) {
            out.push(SweepRow {
                offsets: spec.offsets.clone(),
                row,
            });
        }
    }
    Ok(out)
}

pub fn sweep_summaries(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut groups: Vec<(Vec<i32>, Vec<&ObjectRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(o, _)| *o == r.offsets) {
            Some((_, v)) => v.push(&r.row),
            None => groups.push((r.offsets.clone(), vec![&r.row])),
        }
    }
    let mut out = Vec::new();
    for (offsets, rows) in groups {
        let strata: [(&'static str, fn(&ObjectRow) -> bool); 3] = [
            ("all", |_| true),
            ("stationary", |r| !r.subject.moving),
            ("moving", |r| r.subject.moving),
        ];
        for (name, keep) in strata {
            out.push(SweepSummary {
                offsets: offsets.clone(),
                stratum: name,
                summary: Summary::of(rows.iter().copied().filter(|r| keep(r))),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Hybrid supervision

/// Which objects are eligible for 3D labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    RandomInstance,
    RandomFrame,
    MovingOnly,
    DistanceBand,
    SizeBand,
}

impl SplitMode {
    pub const ALL: [SplitMode; 5] = [
        SplitMode::RandomInstance,
        SplitMode::RandomFrame,
        SplitMode::MovingOnly,
        SplitMode::DistanceBand,
        SplitMode::SizeBand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::RandomInstance => "random-instance",
            SplitMode::RandomFrame => "random-frame",
            SplitMode::MovingOnly => "moving-only",
            SplitMode::DistanceBand => "distance-band",
            SplitMode::SizeBand => "size-band",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub offsets: Vec<i32>,
    pub ratios: Vec<f64>,
    pub modes: Vec<SplitMode>,
    /// Eligible ground distances for `distance-band`, meters.
    pub distance_band: [f64; 2],
    /// Eligible clipped 2D areas for `size-band`, px².
    pub size_band: [f64; 2],
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            offsets: vec![-3, 0, 3],
            ratios: vec![0.0, 0.05, 0.25, 0.5, 1.0],
            modes: SplitMode::ALL.to_vec(),
            distance_band: [20.0, 45.0],
            size_band: [0.0, 10_000.0],
        }
    }
}

/// Marks which subjects get 3D labels: a fraction `ratio` of the eligible
/// pool, taken in a fixed seeded order so larger ratios extend smaller ones.
/// `random-frame` picks whole keyframes until the fraction is reached.
pub fn hybrid_selection(
    subjects: &[Subject],
    mode: SplitMode,
    ratio: f64,
    cfg: &HybridConfig,
    seed: u64,
) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("ratio {ratio} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mode as u64 + 1);
    let eligible = |s: &Subject| match mode {
        SplitMode::RandomInstance | SplitMode::RandomFrame => true,
        SplitMode::MovingOnly => s.moving,
        SplitMode::DistanceBand => {
            s.distance >= cfg.distance_band[0] && s.distance <= cfg.distance_band[1]
        }
        SplitMode::SizeBand => s.image_area >= cfg.size_band[0] && s.image_area <= cfg.size_band[1],
    };
    let pool: Vec<usize> = (0..subjects.len()).filter(|&i| eligible(&subjects[i])).collect();
    let order: Vec<usize> = if mode == SplitMode::RandomFrame {
        let mut frames: Vec<usize> = pool.iter().map(|&i| subjects[i].frame).collect();
        frames.sort_unstable();
        frames.dedup();
        frames.shuffle(&mut rng);
        let rank: BTreeMap<usize, usize> = frames.iter().enumerate().map(|(r, f)| (*f, r)).collect();
        let mut o = pool.clone();
        o.sort_by_key(|&i| (rank[&subjects[i].frame], subjects[i].track_id));
        o
    } else {
        let mut o = pool.clone();
        o.shuffle(&mut rng);
        o
    };
    let target = (ratio * pool.len() as f64).round() as usize;
    let take = if mode == SplitMode::RandomFrame {
        // Extend to the end of the last keyframe touched.
        let mut n = target;
        while n > 0 && n < order.len() && subjects[order[n]].frame == subjects[order[n - 1]].frame {
            n += 1;
        }
        n
    } else {
        target
    };
    let mut mask = vec![false; subjects.len()];
    for &i in &order[..take] {
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridCell {
    pub mode: SplitMode,
    pub ratio: f64,
    pub n_3d: usize,
    pub rows: Vec<ObjectRow>,
    pub summary: Summary,
}

/// Runs every `(mode, ratio)` cell. Recoveries are independent per object,
/// so each subject is recovered once with 2D and once with 3D supervision
/// and the cells are assembled from those runs.
pub fn hybrid(
    w: &Workload,
    subjects: &[Subject],
    cfg: &HybridConfig,
    base: &SupervisionSpec,
) -> Result<Vec<HybridCell>> {
    let mut spec = SupervisionSpec {
        offsets: cfg.offsets.clone(),
        ..base.clone()
    };
    spec.normalize()?;
    let masks: Vec<(SplitMode, f64, Vec<bool>)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.ratios.iter().map(move |&r| (m, r)))
        .map(|(m, r)| Ok((m, r, hybrid_selection(subjects, m, r, cfg, w.seed)?)))
        .collect::<Result<_>>()?;
    let need_3d: Vec<bool> = (0..subjects.len())
        .map(|i| masks.iter().any(|(_, _, m)| m[i]))
        .collect();
    let need_2d: Vec<bool> = (0..subjects.len())
        .map(|i| masks.iter().any(|(_, _, m)| !m[i]))
        .collect();
    let runs: Vec<(Option<ObjectRow>, Option<ObjectRow>)> = subjects
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let run = |three_d: bool| ObjectRow {
                subject: s.clone(),
                supervision_3d: three_d,
                outcome: recover_subject(w, s, &spec, three_d).map_err(|e| e.to_string()),
            };
            (need_2d[i].then(|| run(false)), need_3d[i].then(|| run(true)))
        })
        .collect();
    Ok(masks
        .into_iter()
        .map(|(mode, ratio, mask)| {
            let rows: Vec<ObjectRow> = mask
                .iter()
                .zip(&runs)
                .map(|(&m, (r2, r3))| {
                    let r = if m { r3 } else { r2 };
                    r.clone().expect("run scheduled for every cell")
                })
                .collect();
            HybridCell {
                mode,
                ratio,
                n_3d: mask.iter().filter(|m| **m).count(),
                summary: Summary::of(&rows),
                rows,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Stratification

#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    /// `all`, `distance`, `class` or `motion`
    pub kind: &'static str,
    pub label: String,
    pub summary: Summary,
}

/// Aggregates rows by distance band, pseudo-class and motion state.
pub fn stratify(rows: &[ObjectRow]) -> Vec<Stratum> {
    let mut out = vec![Stratum {
        kind: "all",
        label: "all".into(),
        summary: Summary::of(rows),
    }];
    for (b, _) in DISTANCE_BANDS.iter().enumerate() {
        out.push(Stratum {
            kind: "distance",
            label: band_label(b),
            summary: Summary::of(rows.iter().filter(|r| distance_band(r.subject.distance) == Some(b))),
        });
    }
    for c in [PseudoClass::Pedestrian, PseudoClass::Car, PseudoClass::Bus] {
        out.push(Stratum {
            kind: "class",
            label: c.as_str().into(),
            summary: Summary::of(rows.iter().filter(|r| r.subject.class == c)),
        });
    }
    for (label, moving) in [("stationary", false), ("moving", true)] {
        out.push(Stratum {
            kind: "motion",
            label: label.into(),
            summary: Summary::of(rows.iter().filter(|r| r.subject.moving == moving)),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Loss probes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeDirection {
    /// Along the viewing ray with size scaled in proportion.
    DepthRay,
    Explicit { direction: [f64; 7] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub offsets: Vec<i32>,
    pub direction: ProbeDirection,
    /// Step range; for the depth ray this is meters along the ray.
    pub range: [f64; 2],
    pub n_samples: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            offsets: vec![0],
            direction: ProbeDirection::DepthRay,
            range: [-5.0, 5.0],
            n_samples: 21,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeProfile {
    pub subject: Subject,
    pub outcome: std::result::Result<Vec<(f64, f64)>, String>,
}

impl ProbeProfile {
    pub fn relative_variation(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|p| relative_variation(p))
    }
}

/// Loss profiles through each subject's ground-truth box.
pub fn probe(
    w: &Workload,
    subjects: &[Subject],
    cfg: &ProbeConfig,
    base: &SupervisionSpec,
) -> Result<Vec<ProbeProfile>> {
    let mut spec = SupervisionSpec {
        offsets: cfg.offsets.clone(),
        ..base.clone()
    };
    spec.normalize()?;
    Ok(subjects
        .par_iter()
        .map(|s| {
            let labels = w
                .labels
                .labeled_object(s.track_id, s.frame, &s.view_id, &spec.offsets, false);
            let dir = match &cfg.direction {
                ProbeDirection::DepthRay => depth_ray_direction(&s.gt),
                ProbeDirection::Explicit { direction } => *direction,
            };
            let outcome = ambiguity_probe(
                &labels,
                w.scene.trajectory(),
                &spec,
                &s.gt,
                &dir,
                (cfg.range[0], cfg.range[1]),
                cfg.n_samples,
            )
            .map_err(|e| e.to_string());
            ProbeProfile {
                subject: s.clone(),
                outcome,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Invariant suite

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = nalgebra::Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let angle = rng.gen_range(-3.0..3.0);
    let rot = nalgebra::UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
    let t = nalgebra::Vector3::new(
        rng.gen_range(-50.0..50.0),
        rng.gen_range(-50.0..50.0),
        rng.gen_range(-50.0..50.0),
    );
    Pose::new(rot, t)
}

fn random_box2d(rng: &mut ChaCha8Rng) -> Box2D {
    let x = rng.gen_range(-100.0..100.0);
    let y = rng.gen_range(-100.0..100.0);
    Box2D::from_center_size(x, y, rng.gen_range(1.0..80.0), rng.gen_range(1.0..80.0))
        .expect("positive size")
}

fn random_camera_box(rng: &mut ChaCha8Rng) -> Box3D {
    Box3D::new(
        nalgebra::Vector3::new(
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-1.0..2.0),
            rng.gen_range(8.0..50.0),
        ),
        Size3::new(
            rng.gen_range(0.4..3.0),
            rng.gen_range(0.8..3.5),
            rng.gen_range(0.4..12.0),
        ),
        rng.gen_range(-3.1..3.1),
    )
    .expect("valid random box")
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    failures: usize,
    max_error: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally {
            name,
            tolerance,
            cases: 0,
            failures: 0,
            max_error: 0.0,
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        if !(err <= self.tolerance) {
            self.failures += 1;
        }
        if err.is_nan() {
            self.max_error = f64::NAN;
        } else {
            self.max_error = self.max_error.max(err);
        }
    }

    fn fail(&mut self) {
        self.cases += 1;
        self.failures += 1;
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            cases: self.cases,
            failures: self.failures,
            max_error: self.max_error,
            tolerance: self.tolerance,
        }
    }
}

fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.to_matrix() - b.to_matrix()).abs().max()
}

/// Runs the geometric and supervision invariants on `cases` random inputs
/// each, plus scene-level checks on one generated scene.
pub fn run_checks(seed: u64, cases: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inverse = Tally::new("pose_inverse", 1e-9);
    let mut assoc = Tally::new("pose_associativity", 1e-9);
    let mut matrix = Tally::new("pose_matrix", 1e-9);
    let mut warp_rt = Tally::new("warp_roundtrip", 1e-9);
    let mut giou = Tally::new("giou_axioms", 1e-12);
    let mut hull = Tally::new("projection_hull", 1e-9);
    for _ in 0..cases {
        let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        inverse.record(pose_distance(&a.compose(&a.inverse()), &Pose::identity()));
        assoc.record(pose_distance(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))));
        matrix.record((a.compose(&b).to_matrix() - a.to_matrix() * b.to_matrix()).abs().max());

        let yaw = rng.gen_range(-3.0..3.0);
        let t = nalgebra::Vector3::new(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-20.0..20.0),
        );
        let h = Pose::from_yaw(AxisConvention::Camera, yaw, t);
        let bx = random_camera_box(&mut rng);
        match warp_box(&bx, &h).and_then(|wb| warp_box(&wb, &h.inverse())) {
            Ok(back) => {
                let d = (back.to_params().iter().zip(bx.to_params()))
                    .enumerate()
                    .map(|(k, (x, y))| {
                        if k == 6 {
                            crate::geometry::wrap_angle(x - y).abs()
                        } else {
                            (x - y).abs()
                        }
                    })
                    .fold(0.0, f64::max);
                warp_rt.record(d);
            }
            Err(_) => warp_rt.fail(),
        }

        let (p, q) = (random_box2d(&mut rng), random_box2d(&mut rng));
        match (giou2d(&p, &p), giou2d(&p, &q), giou2d(&q, &p)) {
            (Ok(same), Ok(pq), Ok(qp)) => {
                let mut err = (same - 1.0).abs().max((pq - qp).abs());
                if pq > iou2d(&p, &q) + 1e-12 || !(pq > -1.0 && pq <= 1.0) {
                    err = f64::INFINITY;
                }
                giou.record(err);
            }
            _ => giou.fail(),
        }

        let k = crate::geometry::Intrinsics::new(800.0, 800.0, 800.0, 450.0, 1600.0, 900.0)?;
        let pts: Option<Vec<_>> = corners3d(&bx).iter().map(|c| project_point(&k, c).ok()).collect();
        match (pts, deduce_box2d(&bx, &k)) {
            (Some(pts), Ok(d)) => {
                let (mut lo, mut hi) = (pts[0], pts[0]);
                for p in &pts {
                    lo = lo.inf(p);
                    hi = hi.sup(p);
                }
                let err = [d.x_tl - lo.x, d.y_tl - lo.y, d.x_br - hi.x, d.y_br - hi.y]
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0, f64::max);
                hull.record(err);
            }
            _ => hull.fail(),
        }
    }

    let mut stationary = Tally::new("stationary_consistency", 1e-12);
    let mut flat = Tally::new("depth_flat_single_frame", 1e-6);
    let mut moving_bias = Tally::new("moving_bias_magnitude", 1e-9);
    let scene = generate_scene(&SceneConfig {
        seed,
        n_objects: 30,
        ..SceneConfig::default()
    })?;
    let exact = render_labels(&scene);
    let subjects = select_subjects(&scene, &exact, &PopulationFilter::default());
    let sym = SupervisionSpec::default();
    let single = SupervisionSpec::with_offsets(&[0])?;
    for s in &subjects {
        let tr = scene.track(s.track_id).expect("subject track exists");
        if !s.moving {
            let labels = exact.labeled_object(s.track_id, s.frame, &s.view_id, &sym.offsets, false);
            match TemporalLoss::new(&labels, scene.trajectory(), &sym).and_then(|l| l.loss(&s.gt)) {
                Ok(v) => stationary.record(v),
                Err(Error::NoObservation) => {}
                Err(_) => stationary.fail(),
            }
        }
        let labels = exact.labeled_object(s.track_id, s.frame, &s.view_id, &[0], false);
        // A second view at the same keyframe gives a stereo baseline.
        let single_view = labels.labels.get(&0).is_some_and(|v| v.len() == 1);
        let off = Box3D {
            yaw: crate::geometry::wrap_angle(s.gt.yaw + 0.2),
            ..s.gt
        };
        match ambiguity_probe(
            &labels,
            scene.trajectory(),
            &single,
            &off,
            &depth_ray_direction(&off),
            (-0.2 * s.gt.center.norm(), 0.5 * s.gt.center.norm()),
            11,
        ) {
            Ok(p) if single_view => flat.record(relative_variation(&p)),
            Ok(_) => {}
            Err(_) => flat.fail(),
        }
        if s.moving && s.frame + 3 < scene.frames.len() {
            // Rigidly warping the frame-t box misses the object's own motion.
            let (f0, f1) = (&scene.frames[s.frame], &scene.frames[s.frame + 3]);
            let cam = f0.camera(&s.view_id)?;
            let h = homography(cam, f0, f1, cam);
            let warped = warp_box(&s.gt, &h)?;
            let truth = tr.box_in_camera(f1.timestamp, &f1.ego_pose.compose(&cam.extrinsic));
            let bias = (warped.center - truth.center).norm();
            moving_bias.record((bias - tr.speed() * (f1.timestamp - f0.timestamp)).abs());
        }
    }

    Ok(vec![
        inverse.finish(),
        assoc.finish(),
        matrix.finish(),
        warp_rt.finish(),
        giou.finish(),
        hull.finish(),
        stationary.finish(),
        flat.finish(),
        moving_bias.finish(),
    ])
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub grid: Vec<Vec<i32>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: vec![vec![0], vec![0, 3], vec![-3, 0, 3]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StratifyConfig {
    pub offsets: Vec<i32>,
}

impl Default for StratifyConfig {
    fn default() -> Self {
        Self {
            offsets: vec![-3, 0, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    pub cases: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { cases: 1000 }
    }
}

/// A complete, self-describing experiment. The master `seed` drives scene
/// generation, label jitter, initializations and hybrid splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// `scene.seed` is replaced by `seed`.
    pub scene: SceneConfig,
    /// Pseudo-label jitter scale applied to 2D labels.
    pub jitter: f64,
    pub population: PopulationFilter,
    pub init: InitMode,
    /// `recovery.spec.offsets` is replaced per command.
    pub recovery: RecoveryConfig,
    pub sweep: SweepConfig,
    pub hybrid: HybridConfig,
    pub stratify: StratifyConfig,
    pub probe: ProbeConfig,
    pub check: CheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            scene: SceneConfig::default(),
            jitter: 0.0,
            population: PopulationFilter::default(),
            init: InitMode::default(),
            recovery: RecoveryConfig::default(),
            sweep: SweepConfig::default(),
            hybrid: HybridConfig::default(),
            stratify: StratifyConfig::default(),
            probe: ProbeConfig::default(),
            check: CheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            seed: self.seed,
            ..self.scene.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_config().validate()?;
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be >= 0".into()));
        }
        self.recovery.validate()?;
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for offsets in self
            .sweep
            .grid
            .iter()
            .chain([&self.hybrid.offsets, &self.stratify.offsets, &self.probe.offsets])
        {
            SupervisionSpec::with_offsets(offsets)?;
        }
        if self.hybrid.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("hybrid ratios must lie in [0, 1]".into()));
        }
        if self.probe.n_samples < 2 || !(self.probe.range[1] > self.probe.range[0]) {
            return Err(Error::Config("probe needs n_samples >= 2 and a non-empty range".into()));
        }
        if let InitMode::FromLabel { depth_prior } = self.init {
            if !(depth_prior > 0.0) {
                return Err(Error::Config("depth_prior must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
