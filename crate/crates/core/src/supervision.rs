//! Supervision losses: temporal 2D GIoU localization, smooth-L1 3D
//! localization, the hybrid mix of the two, the Gaussian center-ness target
//! and a central-difference gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::boxes::{deduce_box2d_with, giou2d, Box2D, Box3D};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, AxisConvention, Intrinsics, Pose};
use crate::warp::{homography, offset_frame, FrameContext, WarpConfig};

/// Default central-difference step for every box parameter.
pub const DEFAULT_FD_STEP: [f64; 7] = [1e-4; 7];

/// Upper bound of `1 - GIoU`.
pub const MAX_TERM_LOSS: f64 = 2.0;

/// Which frames supervise a prediction and how the loss terms are weighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisionSpec {
    pub offsets: Vec<i32>,
    pub lambda_3d: f64,
    pub lambda_2d: f64,
    pub beta_loc2d: f64,
    pub beta_ct: f64,
    pub smooth_l1_beta: f64,
    pub param_weights: [f64; 7],
    pub warp: WarpConfig,
}

impl Default for SupervisionSpec {
    fn default() -> Self {
        Self {
            offsets: vec![-3, 0, 3],
            lambda_3d: 1.0,
            lambda_2d: 1.0,
            beta_loc2d: 1.0,
            beta_ct: 1.0,
            smooth_l1_beta: 1.0,
            param_weights: [1.0; 7],
            warp: WarpConfig::default(),
        }
    }
}

impl SupervisionSpec {
    /// Default weights with the given offsets, sorted and deduplicated.
    pub fn with_offsets(offsets: &[i32]) -> Result<Self> {
        let mut spec = Self {
            offsets: offsets.to_vec(),
            ..Self::default()
        };
        spec.normalize()?;
        Ok(spec)
    }

    /// Sorts offsets and checks weights.
    pub fn normalize(&mut self) -> Result<()> {
        self.offsets.sort_unstable();
        self.offsets.dedup();
        if self.offsets.is_empty() {
            return Err(Error::Config("supervision offsets must be non-empty".into()));
        }
        let weights = [
            self.lambda_3d,
            self.lambda_2d,
            self.beta_loc2d,
            self.beta_ct,
        ];
        if weights.iter().chain(self.param_weights.iter()).any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(self.smooth_l1_beta > 0.0) {
            return Err(Error::Config("smooth_l1_beta must be > 0".into()));
        }
        Ok(())
    }

    /// True when every offset's negation is also present.
    pub fn is_symmetric(&self) -> bool {
        self.offsets.iter().all(|d| self.offsets.contains(&-d))
    }

    pub fn max_abs_offset(&self) -> i32 {
        self.offsets.iter().map(|d| d.abs()).max().unwrap_or(0)
    }
}

/// A 2D label in one camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewLabel {
    pub view_id: String,
    pub box2d: Box2D,
}

/// Supervision available for one object, anchored at the frame and camera
/// where its 3D box is predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledObject {
    pub track_id: u32,
    pub frame: usize,
    pub view_id: String,
    /// Temporal 2D labels keyed by signed frame offset.
    pub labels: BTreeMap<i32, Vec<ViewLabel>>,
    /// Present only when the object receives direct 3D supervision.
    pub box3d: Option<Box3D>,
}

impl LabeledObject {
    pub fn validate(&self) -> Result<()> {
        let any_2d = self.labels.values().any(|v| !v.is_empty());
        if !any_2d && self.box3d.is_none() {
            return Err(Error::Config(format!(
                "track {} has neither 2D nor 3D labels",
                self.track_id
            )));
        }
        Ok(())
    }

    /// The label for the anchor view at offset 0, if any.
    pub fn anchor_label(&self) -> Option<&Box2D> {
        self.labels
            .get(&0)?
            .iter()
            .find(|l| l.view_id == self.view_id)
            .map(|l| &l.box2d)
    }
}

/// Smooth-L1 with transition point `beta`.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        a * a / (2.0 * beta)
    } else {
        a - beta / 2.0
    }
}

fn smooth_l1_derivative(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

fn residuals(pred: &Box3D, gt: &Box3D) -> [f64; 7] {
    let p = pred.to_params();
    let g = gt.to_params();
    let mut r: [f64; 7] = std::array::from_fn(|k| p[k] - g[k]);
    r[6] = wrap_angle(r[6]);
    r
}

/// Weighted smooth-L1 over the seven parameter residuals.
pub fn loss_loc3d(pred: &Box3D, gt: &Box3D, spec: &SupervisionSpec) -> f64 {
    residuals(pred, gt)
        .iter()
        .zip(spec.param_weights.iter())
        .map(|(r, w)| w * smooth_l1(*r, spec.smooth_l1_beta))
        .sum()
}

/// Analytic gradient of [`loss_loc3d`] with respect to the prediction.
pub fn grad_loc3d(pred: &Box3D, gt: &Box3D, spec: &SupervisionSpec) -> [f64; 7] {
    let r = residuals(pred, gt);
    std::array::from_fn(|k| spec.param_weights[k] * smooth_l1_derivative(r[k], spec.smooth_l1_beta))
}

/// One precomputed (offset, view) term of the 2D localization loss.
#[derive(Clone, Debug)]
struct Loc2dTerm {
    transform: Pose,
    yaw_delta: f64,
    intrinsics: Intrinsics,
    label: Box2D,
}

/// The temporal 2D localization loss of one object with its frame-to-frame
/// transforms resolved once, so it can be evaluated many times.
#[derive(Clone, Debug)]
pub struct TemporalLoss {
    terms: Vec<Loc2dTerm>,
    near: f64,
}

impl TemporalLoss {
    pub fn new(
        labels: &LabeledObject,
        trajectory: &[FrameContext],
        spec: &SupervisionSpec,
    ) -> Result<Self> {
        let src_frame = trajectory.get(labels.frame).ok_or(Error::FrameOutOfRange {
            frame: labels.frame as i64,
            len: trajectory.len(),
        })?;
        let src_cam = src_frame.camera(&labels.view_id)?;
        let mut terms = Vec::new();
        for &dt in &spec.offsets {
            let dst_frame = &trajectory[offset_frame(trajectory, labels.frame, dt)?];
            for label in labels.labels.get(&dt).into_iter().flatten() {
                let dst_cam = dst_frame.camera(&label.view_id)?;
                let transform = homography(src_cam, src_frame, dst_frame, dst_cam);
                let yaw_delta =
                    transform.yaw_delta(AxisConvention::Camera, spec.warp.tilt_tolerance)?;
                terms.push(Loc2dTerm {
                    transform,
                    yaw_delta,
                    intrinsics: dst_cam.intrinsics,
                    label: label.box2d,
                });
            }
        }
        Ok(Self {
            terms,
            near: spec.warp.near,
        })
    }

    /// Number of labeled (offset, view) pairs.
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Mean `1 - GIoU` over all terms. A term whose warped prediction has a
    /// corner behind the near plane scores the maximum, 2.
    pub fn loss(&self, pred: &Box3D) -> Result<f64> {
        if self.terms.is_empty() {
            return Err(Error::NoObservation);
        }
        let mut sum = 0.0;
        for term in &self.terms {
            let warped = Box3D {
                center: term.transform.apply(&pred.center),
                size: pred.size,
                yaw: wrap_angle(pred.yaw + term.yaw_delta),
            };
            sum += match deduce_box2d_with(&warped, &term.intrinsics, self.near) {
                Ok(projected) => match giou2d(&projected, &term.label) {
                    Ok(g) => 1.0 - g,
                    Err(_) => MAX_TERM_LOSS,
                },
                Err(_) => MAX_TERM_LOSS,
            };
        }
        Ok(sum / self.terms.len() as f64)
    }
}

/// Temporal 2D localization loss: mean of `1 - GIoU` between the warped and
/// deduced prediction and every labeled (offset, view) pair.
pub fn loss_loc2d(
    pred: &Box3D,
    labels: &LabeledObject,
    trajectory: &[FrameContext],
    spec: &SupervisionSpec,
) -> Result<f64> {
    TemporalLoss::new(labels, trajectory, spec)?.loss(pred)
}

/// `lambda_3d * mean(3D branch) + lambda_2d * mean(2D branch)`. Objects with
/// a 3D label go to the 3D branch, the rest to the 2D branch.
pub fn loss_hybrid(
    objects: &[(LabeledObject, Box3D)],
    trajectory: &[FrameContext],
    spec: &SupervisionSpec,
) -> Result<f64> {
    let (mut sum3, mut n3, mut sum2, mut n2) = (0.0, 0usize, 0.0, 0usize);
    for (obj, pred) in objects {
        match &obj.box3d {
            Some(gt) => {
                sum3 += loss_loc3d(pred, gt, spec);
                n3 += 1;
            }
            None => {
                sum2 += spec.beta_loc2d * loss_loc2d(pred, obj, trajectory, spec)?;
                n2 += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(spec.lambda_3d * mean(sum3, n3) + spec.lambda_2d * mean(sum2, n2))
}

/// Gaussian center-ness target of `location` with respect to the 2D box
/// center; sigma is `sigma_scale` times the box width and height.
pub fn centerness_target(box2d: &Box2D, location: [f64; 2], sigma_scale: f64) -> Result<f64> {
    if !(box2d.area() > 0.0) || !(sigma_scale > 0.0) {
        return Err(Error::Degenerate("center-ness needs a positive-area box"));
    }
    let c = box2d.center();
    let su = sigma_scale * box2d.width();
    let sv = sigma_scale * box2d.height();
    let du = location[0] - c.x;
    let dv = location[1] - c.y;
    Ok((-(du * du / (2.0 * su * su) + dv * dv / (2.0 * sv * sv))).exp())
}

/// Central-difference gradient over `[x, y, z, w, h, l, yaw]`.
pub fn grad_fd<F>(loss: F, at: &Box3D, h: &[f64; 7]) -> Result<[f64; 7]>
where
    F: Fn(&Box3D) -> Result<f64>,
{
    let base = at.to_params();
    let probe = |k: usize, sign: f64| -> Result<f64> {
        let mut p = base;
        p[k] += sign * h[k];
        let value = Box3D::from_params(p)
            .and_then(|b| loss(&b))
            .map_err(|e| Error::NonFinite(format!("parameter {k} {sign:+}h: {e}")))?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {k} {sign:+}h")));
        }
        Ok(value)
    };
    let mut g = [0.0; 7];
    for k in 0..7 {
        g[k] = (probe(k, 1.0)? - probe(k, -1.0)?) / (2.0 * h[k]);
    }
    Ok(g)
}
