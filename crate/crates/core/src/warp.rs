//! Frame-to-frame camera transforms and temporal box warping.
//!
//! A box predicted in camera `c` at frame `t` is carried to camera `c'` at
//! frame `t + dt` through the ego and global frames:
//! `camera -> ego(t) -> global -> ego(t + dt) -> camera'`. When `c == c'`
//! the object stays in its own view (inner view); otherwise it crossed into
//! a neighbouring camera (outer view).

use serde::{Deserialize, Serialize};

use crate::boxes::{deduce_box2d_with, Box2D, Box3D, DEFAULT_NEAR};
use crate::error::{Error, Result};
use crate::geometry::{
    validate_rig, wrap_angle, AxisConvention, CameraCalib, Pose, DEFAULT_TILT_TOLERANCE,
};

/// Default minimum visible (clipped) 2D box area in px².
pub const DEFAULT_MIN_AREA: f64 = 64.0;

/// One keyframe of an ego trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameContext {
    pub timestamp: f64,
    /// ego -> global
    pub ego_pose: Pose,
    pub rig: Vec<CameraCalib>,
}

impl FrameContext {
    pub fn camera(&self, view_id: &str) -> Result<&CameraCalib> {
        self.rig
            .iter()
            .find(|c| c.view_id == view_id)
            .ok_or_else(|| Error::UnknownView(view_id.to_string()))
    }
}

/// Checks rig validity and strictly increasing timestamps.
pub fn validate_trajectory(frames: &[FrameContext]) -> Result<()> {
    for f in frames {
        validate_rig(&f.rig)?;
    }
    if frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
        return Err(Error::Config("timestamps must be strictly increasing".into()));
    }
    Ok(())
}

/// Tolerances shared by warping and visibility checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    pub near: f64,
    pub min_area: f64,
    pub tilt_tolerance: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            near: DEFAULT_NEAR,
            min_area: DEFAULT_MIN_AREA,
            tilt_tolerance: DEFAULT_TILT_TOLERANCE,
        }
    }
}

/// A box carried into one camera of another frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpedObservation {
    pub view_id: String,
    pub box_cam: Box3D,
    pub box2d: Box2D,
    pub dt_index: i32,
}

/// Source-camera coordinates at `src_frame` to destination-camera
/// coordinates at `dst_frame`.
pub fn homography(
    src_cam: &CameraCalib,
    src_frame: &FrameContext,
    dst_frame: &FrameContext,
    dst_cam: &CameraCalib,
) -> Pose {
    dst_cam
        .extrinsic
        .inverse()
        .compose(&dst_frame.ego_pose.inverse())
        .compose(&src_frame.ego_pose)
        .compose(&src_cam.extrinsic)
}

/// Rigidly moves a camera-frame box: center through `h`, yaw by the
/// rotation's vertical component, size unchanged.
pub fn warp_box(b: &Box3D, h: &Pose) -> Result<Box3D> {
    warp_box_with(b, h, DEFAULT_TILT_TOLERANCE)
}

pub fn warp_box_with(b: &Box3D, h: &Pose, tilt_tolerance: f64) -> Result<Box3D> {
    let dyaw = h.yaw_delta(AxisConvention::Camera, tilt_tolerance)?;
    Ok(Box3D {
        center: h.apply(&b.center),
        size: b.size,
        yaw: wrap_angle(b.yaw + dyaw),
    })
}

/// 2D box of `b` in camera `cam` if every corner is in front of the near
/// plane and the part inside the image covers at least `min_area` px².
pub fn visible_box2d(b: &Box3D, cam: &CameraCalib, cfg: &WarpConfig) -> Option<Box2D> {
    let d = deduce_box2d_with(b, &cam.intrinsics, cfg.near).ok()?;
    let clipped = d.clip_to_image(&cam.intrinsics)?;
    (clipped.area() >= cfg.min_area).then_some(d)
}

/// Looks up `frame + dt` in a trajectory.
pub fn offset_frame(trajectory: &[FrameContext], frame: usize, dt: i32) -> Result<usize> {
    let target = frame as i64 + dt as i64;
    if target < 0 || target >= trajectory.len() as i64 {
        return Err(Error::FrameOutOfRange {
            frame: target,
            len: trajectory.len(),
        });
    }
    Ok(target as usize)
}

/// Warps a box observed in `src_view` at `frame` into every camera at
/// `frame + dt` and keeps the views where it is visible.
pub fn observe(
    b: &Box3D,
    src_view: &str,
    trajectory: &[FrameContext],
    frame: usize,
    dt: i32,
    cfg: &WarpConfig,
) -> Result<Vec<WarpedObservation>> {
    let src_frame = trajectory.get(frame).ok_or(Error::FrameOutOfRange {
        frame: frame as i64,
        len: trajectory.len(),
    })?;
    let dst_frame = &trajectory[offset_frame(trajectory, frame, dt)?];
    let src_cam = src_frame.camera(src_view)?;
    let mut out = Vec::new();
    for cam in &dst_frame.rig {
        let h = homography(src_cam, src_frame, dst_frame, cam);
        let warped = warp_box_with(b, &h, cfg.tilt_tolerance)?;
        if let Some(box2d) = visible_box2d(&warped, cam, cfg) {
            out.push(WarpedObservation {
                view_id: cam.view_id.clone(),
                box_cam: warped,
                box2d,
                dt_index: dt,
            });
        }
    }
    Ok(out)
}
