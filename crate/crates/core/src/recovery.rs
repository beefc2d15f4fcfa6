//! Per-object recovery of 7-DoF boxes by descent on the
//! supervision losses, and per-object error metrics.

use nalgebra::{SMatrix, SVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{iou3d_aligned, Box2D, Box3D, Size3};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Intrinsics};
use crate::supervision::{
    grad_fd, grad_loc3d, loss_loc3d, LabeledObject, SupervisionSpec, TemporalLoss, DEFAULT_FD_STEP,
};
use crate::warp::FrameContext;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_FACTOR: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
const DIVERGENCE_FACTOR: f64 = 10.0;
const WOLFE_C2: f64 = 0.9;
const MIN_STEP: f64 = 1e-9;
const FD_REFINE_FACTOR: f64 = 0.1;
const MIN_FD_REFINE: f64 = 1e-4;

/// Per-parameter step scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSizes {
    /// meters
    pub position: f64,
    /// fraction of the current size
    pub size_fraction: f64,
    /// radians
    pub yaw: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            position: 0.1,
            size_fraction: 0.05,
            yaw: 0.05,
        }
    }
}

impl StepSizes {
    fn at(&self, b: &Box3D) -> [f64; 7] {
        let p = self.position;
        let f = self.size_fraction;
        [p, p, p, f * b.size.w, f * b.size.h, f * b.size.l, self.yaw]
    }
}

/// Where descent starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitStrategy {
    /// Back-project the anchor-view label center to `depth_prior`.
    FromLabel { size_prior: Size3, depth_prior: f64 },
    /// Start from a given box.
    Explicit { box3d: Box3D },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    #[default]
    Bfgs,
    GradientDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub steps: StepSizes,
    pub method: DescentMethod,
    /// Without line search every iteration takes a full normalized gradient
    /// step and `method` is ignored.
    pub line_search: bool,
    pub max_iters: usize,
    /// Minimum loss decrease over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub fd_step: [f64; 7],
    pub record_params: bool,
    pub init: InitStrategy,
    pub spec: SupervisionSpec,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            steps: StepSizes::default(),
            method: DescentMethod::Bfgs,
            line_search: true,
            max_iters: 2000,
            tolerance: 1e-8,
            patience: 20,
            fd_step: DEFAULT_FD_STEP,
            record_params: false,
            init: InitStrategy::FromLabel {
                size_prior: Size3::new(2.0, 1.6, 4.5),
                depth_prior: 20.0,
            },
            spec: SupervisionSpec::default(),
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        let s = &self.steps;
        if !(s.position > 0.0 && s.size_fraction > 0.0 && s.yaw > 0.0) {
            return Err(Error::Config("step sizes must be > 0".into()));
        }
        if self.fd_step.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("finite-difference steps must be > 0".into()));
        }
        let mut spec = self.spec.clone();
        spec.normalize()
    }
}

/// Per-object errors against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// 3D center distance, meters.
    pub ate: f64,
    /// Center distance in the ground plane (camera x-z), meters.
    pub ate_bev: f64,
    /// `1 - iou3d_aligned`
    pub ase: f64,
    /// Absolute wrapped yaw difference, radians.
    pub aoe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub estimate: Box3D,
    pub initial: Box3D,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub param_trace: Option<Vec<[f64; 7]>>,
    pub metrics: Option<Metrics>,
}

/// Back-projects the 2D box center to `depth_prior` along its viewing ray.
pub fn init_guess(
    obs: &Box2D,
    k: &Intrinsics,
    size_prior: Size3,
    depth_prior: f64,
) -> Result<Box3D> {
    if !(obs.area() > 0.0) {
        return Err(Error::Degenerate("initialization needs a positive-area 2D box"));
    }
    let c = obs.center();
    let ray = Vector3::new((c.x - k.cx) / k.fx, (c.y - k.cy) / k.fy, 1.0);
    Box3D::new(ray * depth_prior, size_prior, 0.0)
}

pub fn eval_metrics(estimate: &Box3D, gt: &Box3D) -> Metrics {
    let d = estimate.center - gt.center;
    Metrics {
        ate: d.norm(),
        ate_bev: d.x.hypot(d.z),
        ase: 1.0 - iou3d_aligned(estimate, gt),
        aoe: wrap_angle(estimate.yaw - gt.yaw).abs(),
    }
}

/// Ray-preserving depth direction for [`ambiguity_probe`]: moving along it
/// by `s` shifts the center `s` meters along its viewing ray and scales the
/// size in proportion, leaving every projection from the source camera fixed.
pub fn depth_ray_direction(b: &Box3D) -> [f64; 7] {
    let r = b.center.norm();
    [
        b.center.x / r,
        b.center.y / r,
        b.center.z / r,
        b.size.w / r,
        b.size.h / r,
        b.size.l / r,
        0.0,
    ]
}

/// The single-object objective: the 3D branch when a 3D label is attached,
/// otherwise the temporal 2D branch.
pub enum Objective {
    Box3d {
        gt: Box3D,
        spec: SupervisionSpec,
    },
    Temporal2d {
        loss: TemporalLoss,
        weight: f64,
    },
}

impl Objective {
    pub fn new(
        labels: &LabeledObject,
        trajectory: &[FrameContext],
        spec: &SupervisionSpec,
    ) -> Result<Self> {
        labels.validate()?;
        Ok(match labels.box3d {
            Some(gt) => Objective::Box3d {
                gt,
                spec: spec.clone(),
            },
            None => {
                let loss = TemporalLoss::new(labels, trajectory, spec)?;
                if loss.n_terms() == 0 {
                    return Err(Error::NoObservation);
                }
                Objective::Temporal2d {
                    loss,
                    weight: spec.lambda_2d * spec.beta_loc2d,
                }
            }
        })
    }

    pub fn value(&self, b: &Box3D) -> Result<f64> {
        match self {
            Objective::Box3d { gt, spec } => Ok(spec.lambda_3d * loss_loc3d(b, gt, spec)),
            Objective::Temporal2d { loss, weight } => Ok(weight * loss.loss(b)?),
        }
    }

    /// Exact gradient for the 3D branch, central differences for the 2D one.
    pub fn gradient(&self, b: &Box3D, fd_step: &[f64; 7]) -> Result<[f64; 7]> {
        match self {
            Objective::Box3d { gt, spec } => {
                Ok(grad_loc3d(b, gt, spec).map(|g| g * spec.lambda_3d))
            }
            Objective::Temporal2d { .. } => grad_fd(|x| self.value(x), b, fd_step),
        }
    }
}

fn resolve_init(
    labels: &LabeledObject,
    trajectory: &[FrameContext],
    init: &InitStrategy,
) -> Result<Box3D> {
    match init {
        InitStrategy::Explicit { box3d } => {
            box3d.validate()?;
            Ok(*box3d)
        }
        InitStrategy::FromLabel {
            size_prior,
            depth_prior,
        } => {
            let obs = labels.anchor_label().ok_or(Error::NoObservation)?;
            let frame = trajectory.get(labels.frame).ok_or(Error::FrameOutOfRange {
                frame: labels.frame as i64,
                len: trajectory.len(),
            })?;
            let k = frame.camera(&labels.view_id)?.intrinsics;
            init_guess(obs, &k, *size_prior, *depth_prior)
        }
    }
}

fn step(b: &Box3D, dir: &[f64; 7], alpha: f64) -> Option<Box3D> {
    let p = b.to_params();
    Box3D::from_params(std::array::from_fn(|k| p[k] + alpha * dir[k])).ok()
}

type Vec7 = SVector<f64, 7>;
type Mat7 = SMatrix<f64, 7, 7>;

struct Accepted {
    x: Box3D,
    fx: f64,
    /// Gradient in scaled coordinates, when the line search evaluated it.
    g: Option<Vec7>,
}

/// Descends the object's objective from the configured initialization.
///
/// Parameters are rescaled by the step sizes taken at the initial box.
/// [`DescentMethod::Bfgs`] runs quasi-Newton steps with a weak Wolfe line
/// search; [`DescentMethod::GradientDescent`] moves along the normalized
/// scaled gradient with Armijo backtracking. Without `line_search` every
/// iteration takes a full normalized gradient step.
///
/// When a line search fails the finite-difference step is refined down to
/// `fd_step * MIN_FD_REFINE` before giving up. The returned estimate is the
/// lowest-loss iterate.
pub fn recover_box(
    labels: &LabeledObject,
    trajectory: &[FrameContext],
    cfg: &RecoveryConfig,
    truth: Option<&Box3D>,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    let objective = Objective::new(labels, trajectory, &cfg.spec)?;
    let initial = resolve_init(labels, trajectory, &cfg.init)?;
    let initial_loss = objective.value(&initial)?;
    let scale = cfg.steps.at(&initial);
    let mut fd_step = cfg.fd_step;
    let gradient = |b: &Box3D, h: &[f64; 7]| -> Result<Vec7> {
        let g = objective.gradient(b, h)?;
        Ok(Vec7::from_fn(|k, _| scale[k] * g[k]))
    };

    let mut x = initial;
    let mut fx = initial_loss;
    let mut best = (x, fx);
    let mut g: Option<Vec7> = None;
    let mut hinv: Option<Mat7> = None;
    let mut trace = vec![fx];
    let mut params = cfg.record_params.then(|| vec![x.to_params()]);
    let mut alpha = 1.0f64;
    let mut iterations = 0;

    while iterations < cfg.max_iters && fx > 0.0 {
        let gx = match g.take() {
            Some(v) => v,
            None => gradient(&x, &fd_step)?,
        };
        let norm = gx.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }

        let accepted = if !cfg.line_search {
            let dir = to_params(&(-gx / norm), &scale);
            let candidate = step(&x, &dir, 1.0)
                .ok_or_else(|| Error::NonFinite("full step left the valid box domain".into()))?;
            let fc = objective.value(&candidate)?;
            if !fc.is_finite() {
                return Err(Error::NonFinite("full step".into()));
            }
            Some(Accepted { x: candidate, fx: fc, g: None })
        } else {
            match cfg.method {
                DescentMethod::GradientDescent => {
                    let dir = to_params(&(-gx / norm), &scale);
                    let found = armijo(&objective, &x, fx, &dir, -norm, (2.0 * alpha).min(1.0));
                    if let Some((_, a)) = &found {
                        alpha = *a;
                    }
                    found.map(|(acc, _)| acc)
                }
                DescentMethod::Bfgs => {
                    let h = hinv.unwrap_or_else(Mat7::identity);
                    let mut dz = -(h * gx);
                    let mut slope = gx.dot(&dz);
                    if !(slope < 0.0) {
                        hinv = None;
                        dz = -gx;
                        slope = -norm * norm;
                    }
                    let found = wolfe(&objective, &gradient, &fd_step, &x, fx, &dz, slope, &scale)?;
                    if let Some(acc) = &found {
                        let sk = Vec7::from_fn(|k, _| {
                            (acc.x.to_params()[k] - x.to_params()[k]) / scale[k]
                        });
                        let yk = acc.g.expect("wolfe returns gradients") - gx;
                        let sy = sk.dot(&yk);
                        if sy > 1e-16 {
                            let h0 = hinv.unwrap_or_else(|| Mat7::identity() * (sy / yk.dot(&yk)));
                            let rho = 1.0 / sy;
                            let i = Mat7::identity();
                            hinv = Some(
                                (i - rho * sk * yk.transpose()) * h0 * (i - rho * yk * sk.transpose())
                                    + rho * sk * sk.transpose(),
                            );
                        }
                    }
                    found
                }
            }
        };

        let Some(acc) = accepted else {
            if hinv.is_some() {
                hinv = None;
                continue;
            }
            if fd_step[0] > cfg.fd_step[0] * MIN_FD_REFINE {
                fd_step = fd_step.map(|h| h * FD_REFINE_FACTOR);
                alpha = 1.0;
                continue;
            }
            break;
        };
        iterations += 1;
        x = acc.x;
        fx = acc.fx;
        g = acc.g;
        trace.push(fx);
        if fx < best.1 {
            best = (x, fx);
        }
        if let Some(p) = params.as_mut() {
            p.push(x.to_params());
        }
        if initial_loss > 0.0 && fx > DIVERGENCE_FACTOR * initial_loss {
            return Err(Error::Divergence {
                loss: fx,
                initial: initial_loss,
            });
        }
        if trace.len() > cfg.patience && trace[trace.len() - 1 - cfg.patience] - fx < cfg.tolerance
        {
            break;
        }
    }

    let (estimate, final_loss) = best;
    Ok(RecoveryResult {
        estimate,
        initial,
        initial_loss,
        final_loss,
        iterations,
        loss_trace: trace,
        param_trace: params,
        metrics: truth.map(|gt| eval_metrics(&estimate, gt)),
    })
}

fn to_params(z: &Vec7, scale: &[f64; 7]) -> [f64; 7] {
    std::array::from_fn(|k| scale[k] * z[k])
}

fn armijo(
    objective: &Objective,
    x: &Box3D,
    fx: f64,
    dir: &[f64; 7],
    slope: f64,
    a0: f64,
) -> Option<(Accepted, f64)> {
    let mut a = a0;
    for _ in 0..MAX_BACKTRACKS {
        if let Some(candidate) = step(x, dir, a) {
            if let Ok(fc) = objective.value(&candidate) {
                if fc.is_finite() && fc <= fx + ARMIJO_C * a * slope {
                    return Some((Accepted { x: candidate, fx: fc, g: None }, a));
                }
            }
        }
        a *= BACKTRACK_FACTOR;
    }
    None
}

/// Bisection/doubling search for a step satisfying the weak Wolfe
/// conditions along scaled direction `dz`.
#[allow(clippy::too_many_arguments)]
fn wolfe(
    objective: &Objective,
    gradient: &impl Fn(&Box3D, &[f64; 7]) -> Result<Vec7>,
    fd_step: &[f64; 7],
    x: &Box3D,
    fx: f64,
    dz: &Vec7,
    slope: f64,
    scale: &[f64; 7],
) -> Result<Option<Accepted>> {
    let dir = to_params(dz, scale);
    let (mut lo, mut hi, mut t) = (0.0f64, f64::INFINITY, 1.0f64);
    let mut best: Option<Accepted> = None;
    for _ in 0..MAX_BACKTRACKS {
        let candidate = step(x, &dir, t);
        let fc = candidate.and_then(|c| objective.value(&c).ok().filter(|v| v.is_finite()));
        match (candidate, fc) {
            (Some(c), Some(fc)) if fc <= fx + ARMIJO_C * t * slope => match gradient(&c, fd_step) {
                Ok(gc) => {
                    let done = gc.dot(dz) >= WOLFE_C2 * slope;
                    best = Some(Accepted { x: c, fx: fc, g: Some(gc) });
                    if done {
                        break;
                    }
                    lo = t;
                }
                Err(Error::NonFinite(_)) => hi = t,
                Err(e) => return Err(e),
            },
            _ => hi = t,
        }
        t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
        if hi < MIN_STEP {
            return Ok(None);
        }
    }
    Ok(best)
}

/// Loss along `box + s * direction` for `n_samples` evenly spaced `s` in
/// `range`.
pub fn ambiguity_probe(
    labels: &LabeledObject,
    trajectory: &[FrameContext],
    spec: &SupervisionSpec,
    b: &Box3D,
    direction: &[f64; 7],
    range: (f64, f64),
    n_samples: usize,
) -> Result<Vec<(f64, f64)>> {
    if direction.iter().all(|d| *d == 0.0) || direction.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("probe direction must be finite and non-zero".into()));
    }
    if n_samples < 2 || !(range.1 > range.0) {
        return Err(Error::Config("probe needs n_samples >= 2 and a non-empty range".into()));
    }
    let objective = Objective::new(labels, trajectory, spec)?;
    (0..n_samples)
        .map(|i| {
            let s = range.0 + (range.1 - range.0) * i as f64 / (n_samples - 1) as f64;
            let p = b.to_params();
            let probe = Box3D::from_params(std::array::from_fn(|k| p[k] + s * direction[k]))?;
            Ok((s, objective.value(&probe)?))
        })
        .collect()
}

/// `(max - min) / max(|max|, |min|)` over a probe profile; zero for an
/// all-zero profile.
pub fn relative_variation(profile: &[(f64, f64)]) -> f64 {
    let (lo, hi) = profile
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(*v), hi.max(*v))
        });
    let scale = lo.abs().max(hi.abs());
    if scale == 0.0 {
        0.0
    } else {
        (hi - lo) / scale
    }
}

/// Initialization basin around a ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Basin {
    /// Center scaled along its viewing ray by `1 ± depth_fraction`.
    pub depth_fraction: f64,
    /// Each size scaled by `1 ± size_fraction`.
    pub size_fraction: f64,
    /// Yaw offset in `± yaw` radians.
    pub yaw: f64,
}

impl Default for Basin {
    fn default() -> Self {
        Self {
            depth_fraction: 0.3,
            size_fraction: 0.2,
            yaw: 0.3,
        }
    }
}

impl Basin {
    pub fn sample<R: Rng>(&self, gt: &Box3D, rng: &mut R) -> Box3D {
        let mut u = |a: f64| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
        let depth = 1.0 + u(self.depth_fraction);
        let sw = 1.0 + u(self.size_fraction);
        let sh = 1.0 + u(self.size_fraction);
        let sl = 1.0 + u(self.size_fraction);
        let dyaw = u(self.yaw);
        Box3D {
            center: gt.center * depth,
            size: Size3::new(gt.size.w * sw, gt.size.h * sh, gt.size.l * sl),
            yaw: wrap_angle(gt.yaw + dyaw),
        }
    }
}
