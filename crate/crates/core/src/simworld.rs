//! Synthetic multi-camera driving scenes.
//!
//! An ego vehicle drives a straight line or a constant-curvature arc on the
//! ground plane with a six-camera rig. Objects are static or move with
//! constant velocity. Ground-truth 3D boxes are expressed in every camera
//! that sees them, and 2D labels are deduced from those boxes.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{Box2D, Box3D, Size3};
use crate::error::{Error, Result};
use crate::geometry::{level_camera_rotation, wrap_angle, AxisConvention, CameraCalib, Intrinsics, Pose};
use crate::supervision::{LabeledObject, ViewLabel};
use crate::warp::{validate_trajectory, visible_box2d, FrameContext, WarpConfig};

pub const SCENE_VERSION: u32 = 1;
pub const LABELS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoClass {
    Pedestrian,
    Car,
    Bus,
}

impl PseudoClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PseudoClass::Pedestrian => "pedestrian",
            PseudoClass::Car => "car",
            PseudoClass::Bus => "bus",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class: PseudoClass,
    /// Nominal (w, h, l) in meters.
    pub size: Size3,
    /// Each dimension is scaled by a factor drawn from `1 ± size_spread`.
    pub size_spread: f64,
    /// Relative sampling weight.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub view_id: String,
    /// Optical-axis azimuth, degrees counterclockwise from ego forward.
    pub azimuth_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub cameras: Vec<RigCamera>,
    pub intrinsics: Intrinsics,
    /// Camera height above ground, meters.
    pub mount_height: f64,
    /// Horizontal distance of the cameras from the ego origin, meters.
    pub mount_radius: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        let cam = |id: &str, az: f64| RigCamera {
            view_id: id.to_string(),
            azimuth_deg: az,
        };
        Self {
            cameras: vec![
                cam("CAM_FRONT", 0.0),
                cam("CAM_FRONT_RIGHT", -55.0),
                cam("CAM_FRONT_LEFT", 55.0),
                cam("CAM_BACK", 180.0),
                cam("CAM_BACK_LEFT", 110.0),
                cam("CAM_BACK_RIGHT", -110.0),
            ],
            intrinsics: Intrinsics {
                fx: 800.0,
                fy: 800.0,
                cx: 800.0,
                cy: 450.0,
                width: 1600.0,
                height: 900.0,
            },
            mount_height: 1.5,
            mount_radius: 1.0,
        }
    }
}

impl RigSpec {
    pub fn calibrations(&self) -> Vec<CameraCalib> {
        self.cameras
            .iter()
            .map(|c| {
                let az = c.azimuth_deg.to_radians();
                CameraCalib {
                    view_id: c.view_id.clone(),
                    extrinsic: Pose::new(
                        level_camera_rotation(az),
                        Vector3::new(
                            self.mount_radius * az.cos(),
                            self.mount_radius * az.sin(),
                            self.mount_height,
                        ),
                    ),
                    intrinsics: self.intrinsics,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EgoPath {
    Straight { speed: f64 },
    /// Constant speed on a circle of curvature `curvature` (1/m, positive turns left).
    Arc { speed: f64, curvature: f64 },
}

impl EgoPath {
    pub fn speed(&self) -> f64 {
        match *self {
            EgoPath::Straight { speed } | EgoPath::Arc { speed, .. } => speed,
        }
    }

    /// ego -> global at time `t`; the ego starts at the global origin facing +x.
    pub fn pose_at(&self, t: f64) -> Pose {
        match *self {
            EgoPath::Straight { speed } => {
                Pose::from_translation(Vector3::new(speed * t, 0.0, 0.0))
            }
            EgoPath::Arc { speed, curvature } if curvature.abs() < 1e-12 => {
                Pose::from_translation(Vector3::new(speed * t, 0.0, 0.0))
            }
            EgoPath::Arc { speed, curvature } => {
                let heading = curvature * speed * t;
                let pos = Vector3::new(
                    heading.sin() / curvature,
                    (1.0 - heading.cos()) / curvature,
                    0.0,
                );
                Pose::from_yaw(AxisConvention::ZUp, heading, pos)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Hz
    pub keyframe_rate: f64,
    pub n_keyframes: usize,
    pub rig: RigSpec,
    pub n_objects: usize,
    pub moving_fraction: f64,
    /// m/s, `[min, max]`
    pub speed_range: [f64; 2],
    pub classes: Vec<ClassSpec>,
    /// Ground-plane distance from the ego at the anchor keyframe, meters.
    pub spawn_distance: [f64; 2],
    /// Minimum lateral offset from the ego's heading line at spawn, meters.
    pub min_lateral: f64,
    /// Anchor keyframes are drawn from `[margin, n_keyframes - 1 - margin]`.
    pub anchor_margin: usize,
    pub ego: EgoPath,
    pub visibility: WarpConfig,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            keyframe_rate: 2.0,
            n_keyframes: 40,
            rig: RigSpec::default(),
            n_objects: 60,
            moving_fraction: 0.26,
            speed_range: [1.0, 8.0],
            classes: vec![
                ClassSpec {
                    class: PseudoClass::Pedestrian,
                    size: Size3::new(0.6, 1.7, 0.6),
                    size_spread: 0.1,
                    weight: 0.3,
                },
                ClassSpec {
                    class: PseudoClass::Car,
                    size: Size3::new(2.0, 1.6, 4.5),
                    size_spread: 0.1,
                    weight: 0.55,
                },
                ClassSpec {
                    class: PseudoClass::Bus,
                    size: Size3::new(2.9, 3.2, 11.0),
                    size_spread: 0.1,
                    weight: 0.15,
                },
            ],
            spawn_distance: [5.0, 55.0],
            min_lateral: 2.5,
            anchor_margin: 3,
            ego: EgoPath::Straight { speed: 8.0 },
            visibility: WarpConfig::default(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.keyframe_rate > 0.0) {
            return bad("keyframe_rate must be > 0");
        }
        if self.n_keyframes < 2 {
            return bad("n_keyframes must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) {
            return bad("moving_fraction must lie in [0, 1]");
        }
        let [s0, s1] = self.speed_range;
        if !(s0 >= 0.0 && s1 >= s0 && s1.is_finite()) {
            return bad("speed_range must satisfy 0 <= min <= max");
        }
        let [d0, d1] = self.spawn_distance;
        if !(d0 > 0.0 && d1 >= d0 && d1.is_finite()) {
            return bad("spawn_distance must satisfy 0 < min <= max");
        }
        if !(self.min_lateral >= 0.0 && self.min_lateral < d1) {
            return bad("min_lateral must lie in [0, spawn_distance max)");
        }
        if 2 * self.anchor_margin >= self.n_keyframes {
            return bad("anchor_margin leaves no anchor keyframes");
        }
        if self.n_objects > 0 {
            if self.classes.is_empty() {
                return bad("at least one class is required");
            }
            if self.classes.iter().any(|c| !(c.weight >= 0.0))
                || self.classes.iter().map(|c| c.weight).sum::<f64>() <= 0.0
            {
                return bad("class weights must be >= 0 with a positive sum");
            }
            for c in &self.classes {
                if !(c.size.w > 0.0 && c.size.h > 0.0 && c.size.l > 0.0)
                    || !(0.0..1.0).contains(&c.size_spread)
                {
                    return bad("class sizes must be positive with size_spread in [0, 1)");
                }
            }
        }
        if !(self.ego.speed() >= 0.0) {
            return bad("ego speed must be >= 0");
        }
        self.rig.intrinsics.validate()?;
        crate::geometry::validate_rig(&self.rig.calibrations())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.keyframe_rate
    }
}

/// A constant-velocity object on the ground plane (global frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub track_id: u32,
    pub class: PseudoClass,
    pub size: Size3,
    /// Box center at t = 0, meters.
    pub position: [f64; 3],
    /// m/s; all zero for static objects.
    pub velocity: [f64; 3],
    /// Heading about +z, radians.
    pub yaw: f64,
    /// Keyframe around which the object was placed in view.
    pub anchor_frame: usize,
}

impl ObjectTrack {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        Vector3::from(self.position) + Vector3::from(self.velocity) * t
    }

    pub fn is_moving(&self) -> bool {
        self.velocity.iter().any(|v| *v != 0.0)
    }

    pub fn speed(&self) -> f64 {
        Vector3::from(self.velocity).norm()
    }

    /// Ground-truth box in the camera whose camera->global pose is `cam_to_global`.
    pub fn box_in_camera(&self, t: f64, cam_to_global: &Pose) -> Box3D {
        let to_cam = cam_to_global.inverse();
        let heading = to_cam.rotate(&AxisConvention::ZUp.heading(self.yaw));
        Box3D {
            center: to_cam.apply(&self.position_at(t)),
            size: self.size,
            yaw: wrap_angle(AxisConvention::Camera.yaw_of(&heading)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub frames: Vec<FrameContext>,
    pub tracks: Vec<ObjectTrack>,
}

impl Scene {
    pub fn trajectory(&self) -> &[FrameContext] {
        &self.frames
    }

    pub fn track(&self, track_id: u32) -> Option<&ObjectTrack> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }

    /// Ground-plane distance between the ego origin and the object at `frame`.
    pub fn ground_distance(&self, track: &ObjectTrack, frame: usize) -> f64 {
        let f = &self.frames[frame];
        let d = track.position_at(f.timestamp) - f.ego_pose.translation();
        d.x.hypot(d.y)
    }
}

fn sample_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Builds a scene; identical configs give bit-identical scenes.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rig = config.rig.calibrations();
    let frames: Vec<FrameContext> = (0..config.n_keyframes)
        .map(|k| {
            let t = config.timestamp(k);
            FrameContext {
                timestamp: t,
                ego_pose: config.ego.pose_at(t),
                rig: rig.clone(),
            }
        })
        .collect();

    let n_movers = (config.moving_fraction * config.n_objects as f64).round() as usize;
    let mut moving = vec![false; config.n_objects];
    moving[..n_movers].iter_mut().for_each(|m| *m = true);
    moving.shuffle(&mut rng);

    let total_weight: f64 = config.classes.iter().map(|c| c.weight).sum();
    let mut tracks = Vec::with_capacity(config.n_objects);
    for (i, &is_moving) in moving.iter().enumerate() {
        let mut pick = rng.gen_range(0.0..total_weight);
        let class = config
            .classes
            .iter()
            .find(|c| {
                pick -= c.weight;
                pick < 0.0
            })
            .unwrap_or(config.classes.last().expect("validated non-empty"));
        let mut spread = || 1.0 + rng.gen_range(-1.0..=1.0) * class.size_spread;
        let size = Size3::new(class.size.w * spread(), class.size.h * spread(), class.size.l * spread());

        let anchor_frame =
            rng.gen_range(config.anchor_margin..config.n_keyframes - config.anchor_margin);
        let rel = loop {
            let d = sample_range(&mut rng, config.spawn_distance);
            let az = rng.gen_range(-PI..PI);
            let (s, c) = az.sin_cos();
            if (d * s).abs() >= config.min_lateral {
                break Vector3::new(d * c, d * s, size.h / 2.0);
            }
        };
        let t_anchor = frames[anchor_frame].timestamp;
        let anchor_pos = frames[anchor_frame].ego_pose.apply(&rel);

        let (velocity, yaw) = if is_moving {
            let speed = sample_range(&mut rng, config.speed_range);
            let heading = rng.gen_range(-PI..PI);
            (AxisConvention::ZUp.heading(heading) * speed, heading)
        } else {
            (Vector3::zeros(), rng.gen_range(-PI..PI))
        };
        let position = anchor_pos - velocity * t_anchor;
        tracks.push(ObjectTrack {
            track_id: i as u32,
            class: class.class,
            size,
            position: position.into(),
            velocity: velocity.into(),
            yaw: wrap_angle(yaw),
            anchor_frame,
        });
    }

    Ok(Scene {
        config: config.clone(),
        frames,
        tracks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub track_id: u32,
    pub box3d: Box3D,
    pub box2d: Box2D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewLabels {
    pub view_id: String,
    pub objects: Vec<ObjectLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub t: f64,
    pub views: Vec<ViewLabels>,
}

/// Per-keyframe, per-camera ground truth for every visible object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLabels {
    pub version: u32,
    pub frames: Vec<FrameLabels>,
}

impl SceneLabels {
    /// All labels of `track_id` at `frame`, with their view ids.
    pub fn observations(&self, frame: usize, track_id: u32) -> Vec<(&str, &ObjectLabel)> {
        let Some(f) = self.frames.get(frame) else {
            return Vec::new();
        };
        f.views
            .iter()
            .filter_map(|v| {
                v.objects
                    .iter()
                    .find(|o| o.track_id == track_id)
                    .map(|o| (v.view_id.as_str(), o))
            })
            .collect()
    }

    pub fn label(&self, frame: usize, view_id: &str, track_id: u32) -> Option<&ObjectLabel> {
        self.frames
            .get(frame)?
            .views
            .iter()
            .find(|v| v.view_id == view_id)?
            .objects
            .iter()
            .find(|o| o.track_id == track_id)
    }

    pub fn n_labels(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| f.views.iter())
            .map(|v| v.objects.len())
            .sum()
    }

    /// Collects temporal 2D labels of one object around `frame`. Offsets that
    /// fall outside the sequence are left empty. With `with_3d`, the anchor
    /// view's ground-truth box is attached for direct 3D supervision.
    pub fn labeled_object(
        &self,
        track_id: u32,
        frame: usize,
        view_id: &str,
        offsets: &[i32],
        with_3d: bool,
    ) -> LabeledObject {
        let mut labels = std::collections::BTreeMap::new();
        for &dt in offsets {
            let target = frame as i64 + dt as i64;
            if target < 0 || target >= self.frames.len() as i64 {
                continue;
            }
            let views: Vec<ViewLabel> = self
                .observations(target as usize, track_id)
                .into_iter()
                .map(|(v, o)| ViewLabel {
                    view_id: v.to_string(),
                    box2d: o.box2d,
                })
                .collect();
            labels.insert(dt, views);
        }
        let box3d = if with_3d {
            self.label(frame, view_id, track_id).map(|o| o.box3d)
        } else {
            None
        };
        LabeledObject {
            track_id,
            frame,
            view_id: view_id.to_string(),
            labels,
            box3d,
        }
    }
}

/// Ground-truth labels for every keyframe and camera.
pub fn render_labels(scene: &Scene) -> SceneLabels {
    let vis = scene.config.visibility;
    let frames = scene
        .frames
        .par_iter()
        .map(|f| FrameLabels {
            t: f.timestamp,
            views: f
                .rig
                .iter()
                .map(|cam| {
                    let cam_to_global = f.ego_pose.compose(&cam.extrinsic);
                    let objects = scene
                        .tracks
                        .iter()
                        .filter_map(|track| {
                            let box3d = track.box_in_camera(f.timestamp, &cam_to_global);
                            visible_box2d(&box3d, cam, &vis).map(|box2d| ObjectLabel {
                                track_id: track.track_id,
                                box3d,
                                box2d,
                            })
                        })
                        .collect();
                    ViewLabels {
                        view_id: cam.view_id.clone(),
                        objects,
                    }
                })
                .collect(),
        })
        .collect();
    SceneLabels {
        version: LABELS_VERSION,
        frames,
    }
}

/// Perturbs every 2D label: center shifted by `U(-scale, scale)` times the
/// box width/height, width and height each scaled by `1 + U(-scale, scale)`.
/// 3D boxes are untouched.
pub fn jitter_labels(labels: &SceneLabels, scale: f64, seed: u64) -> Result<SceneLabels> {
    if !(scale >= 0.0) {
        return Err(Error::Config("jitter scale must be >= 0".into()));
    }
    let mut out = labels.clone();
    if scale == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for obj in out
        .frames
        .iter_mut()
        .flat_map(|f| f.views.iter_mut())
        .flat_map(|v| v.objects.iter_mut())
    {
        let b = obj.box2d;
        let (w, h) = (b.width(), b.height());
        let c = b.center();
        let mut u = || rng.gen_range(-scale..=scale);
        let cu = c.x + u() * w;
        let cv = c.y + u() * h;
        let nw = (w * (1.0 + u())).max(0.0);
        let nh = (h * (1.0 + u())).max(0.0);
        obj.box2d = Box2D {
            x_tl: cu - nw / 2.0,
            y_tl: cv - nh / 2.0,
            x_br: cu + nw / 2.0,
            y_br: cv + nh / 2.0,
        };
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Units {
    length: String,
    angle: String,
    time: String,
    pixels: String,
}

#[derive(Serialize, Deserialize)]
struct EgoPoseRecord {
    t: f64,
    #[serde(flatten)]
    pose: Pose,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    units: Units,
    config: SceneConfig,
    ego_poses: Vec<EgoPoseRecord>,
    rig: Vec<CameraCalib>,
    tracks: Vec<ObjectTrack>,
}

/// Scene as pretty JSON.
pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let file = SceneFile {
        version: SCENE_VERSION,
        units: Units {
            length: "m".into(),
            angle: "rad".into(),
            time: "s".into(),
            pixels: "px".into(),
        },
        config: scene.config.clone(),
        ego_poses: scene
            .frames
            .iter()
            .map(|f| EgoPoseRecord {
                t: f.timestamp,
                pose: f.ego_pose,
            })
            .collect(),
        rig: scene.frames.first().map(|f| f.rig.clone()).unwrap_or_default(),
        tracks: scene.tracks.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Schema(e.to_string()))
}

fn check_version(text: &str, expected: u32, what: &str) -> Result<()> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("{what}: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == expected as u64 => Ok(()),
        Some(v) => Err(Error::Schema(format!(
            "{what}: unsupported version {v} (expected {expected})"
        ))),
        None => Err(Error::Schema(format!("{what}: missing integer field `version`"))),
    }
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    check_version(text, SCENE_VERSION, "scene")?;
    let file: SceneFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("scene: {e}")))?;
    let frames: Vec<FrameContext> = file
        .ego_poses
        .into_iter()
        .map(|r| FrameContext {
            timestamp: r.t,
            ego_pose: r.pose,
            rig: file.rig.clone(),
        })
        .collect();
    validate_trajectory(&frames).map_err(|e| Error::Schema(format!("scene: {e}")))?;
    file.config
        .validate()
        .map_err(|e| Error::Schema(format!("scene config: {e}")))?;
    Ok(Scene {
        config: file.config,
        frames,
        tracks: file.tracks,
    })
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    std::fs::write(path, scene_to_json(scene)?)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    scene_from_json(&std::fs::read_to_string(path)?)
}

pub fn labels_to_json(labels: &SceneLabels) -> Result<String> {
    serde_json::to_string_pretty(labels).map_err(|e| Error::Schema(e.to_string()))
}

pub fn labels_from_json(text: &str) -> Result<SceneLabels> {
    check_version(text, LABELS_VERSION, "labels")?;
    serde_json::from_str(text).map_err(|e| Error::Schema(format!("labels: {e}")))
}

pub fn save_labels(labels: &SceneLabels, path: &Path) -> Result<()> {
    std::fs::write(path, labels_to_json(labels)?)?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<SceneLabels> {
    labels_from_json(&std::fs::read_to_string(path)?)
}
