//! SE(3) poses and pinhole camera calibration.
//!
//! Camera frames use x right, y down, z forward. Ego and global frames use
//! x forward, y left, z up. Yaw is measured about the gravity axis in both:
//! `-y` in a camera frame, `+z` in ego/global frames.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance on the out-of-plane component of a warp rotation.
pub const DEFAULT_TILT_TOLERANCE: f64 = 1e-6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Which axis is "up" for yaw extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisConvention {
    /// x right, y down, z forward; yaw about `-y`, zero heading along `+z`.
    Camera,
    /// x forward, y left, z up; yaw about `+z`, zero heading along `+x`.
    ZUp,
}

impl AxisConvention {
    fn up(self) -> Vector3<f64> {
        match self {
            AxisConvention::Camera => -Vector3::y(),
            AxisConvention::ZUp => Vector3::z(),
        }
    }

    /// Heading direction for a given yaw.
    pub fn heading(self, yaw: f64) -> Vector3<f64> {
        let (s, c) = yaw.sin_cos();
        match self {
            AxisConvention::Camera => Vector3::new(-s, 0.0, c),
            AxisConvention::ZUp => Vector3::new(c, s, 0.0),
        }
    }

    /// Yaw of a direction, ignoring its vertical component.
    pub fn yaw_of(self, dir: &Vector3<f64>) -> f64 {
        match self {
            AxisConvention::Camera => (-dir.x).atan2(dir.z),
            AxisConvention::ZUp => dir.y.atan2(dir.x),
        }
    }

    /// Rotation by `yaw` about this convention's vertical axis.
    pub fn yaw_rotation(self, yaw: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Unit::new_unchecked(self.up()), yaw)
    }
}

/// A rigid transform: `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from a scalar-first quaternion `[w, x, y, z]` and a
    /// translation. The quaternion is normalized; it must be finite and
    /// non-zero.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        if q.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if norm < 1e-12 {
            return Err(Error::InvalidPose("zero quaternion".into()));
        }
        Ok(Self::new(
            UnitQuaternion::new_unchecked(quat / norm),
            Vector3::new(t[0], t[1], t[2]),
        ))
    }

    /// Rotation by `yaw` about the vertical axis of `convention`, followed by
    /// a translation.
    pub fn from_yaw(convention: AxisConvention, yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(convention.yaw_rotation(yaw), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Scalar-first quaternion components.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Same pose with the quaternion sign chosen so that `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.rotation.w < 0.0 {
            Self {
                rotation: UnitQuaternion::new_unchecked(-self.rotation.into_inner()),
                translation: self.translation,
            }
        } else {
            *self
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotates a direction (no translation).
    pub fn rotate(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * dir
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.rotation
            .to_rotation_matrix()
            .to_homogeneous()
            .append_translation(&self.translation)
    }

    /// Signed change in yaw induced by this pose's rotation.
    ///
    /// Fails with [`Error::WarpTilt`] if the rotation moves the vertical axis
    /// by more than `tolerance` radians.
    pub fn yaw_delta(&self, convention: AxisConvention, tolerance: f64) -> Result<f64> {
        let up = convention.up();
        let moved = self.rotation * up;
        let chord = (moved - up).norm();
        let tilt = 2.0 * (chord / 2.0).min(1.0).asin();
        if tilt > tolerance {
            return Err(Error::WarpTilt { tilt, tolerance });
        }
        let heading = self.rotation * convention.heading(0.0);
        Ok(wrap_angle(convention.yaw_of(&heading)))
    }

    /// Component-wise comparison of canonicalized poses.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        let a = self.canonical();
        let b = other.canonical();
        a.wxyz()
            .iter()
            .zip(b.wxyz().iter())
            .all(|(x, y)| (x - y).abs() <= tol)
            && (a.translation - b.translation).amax() <= tol
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let inner = q.into_inner();
    let sign = if inner.w < 0.0 { -1.0 } else { 1.0 };
    UnitQuaternion::new_unchecked(inner * (sign / inner.norm()))
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.wxyz(),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        // Stored quaternions are already unit; keep them bit-exact on reload.
        let [w, x, y, z] = repr.rotation;
        let quat = Quaternion::new(w, x, y, z);
        if (quat.norm() - 1.0).abs() > 1e-9 || repr.translation.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom(
                "pose must carry a finite unit quaternion [w,x,y,z]",
            ));
        }
        Ok(Pose {
            rotation: UnitQuaternion::new_unchecked(quat),
            translation: Vector3::from(repr.translation),
        })
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("intrinsics must be finite".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Config(
                "intrinsics need fx, fy, width, height > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Calibration of one rig camera. `extrinsic` maps camera coordinates to
/// ego coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraCalib {
    pub view_id: String,
    pub extrinsic: Pose,
    pub intrinsics: Intrinsics,
}

/// Rotation taking camera axes (x right, y down, z forward) to ego axes for
/// a level camera whose optical axis points at `azimuth` (counterclockwise
/// from ego forward).
pub fn level_camera_rotation(azimuth: f64) -> UnitQuaternion<f64> {
    let (s, c) = azimuth.sin_cos();
    let forward = Vector3::new(c, s, 0.0);
    let right = Vector3::new(s, -c, 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let m = nalgebra::Matrix3::from_columns(&[right, down, forward]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

/// Checks that view ids in a rig are unique and every intrinsics block is valid.
pub fn validate_rig(rig: &[CameraCalib]) -> Result<()> {
    if rig.is_empty() {
        return Err(Error::Config("camera rig is empty".into()));
    }
    for (i, cam) in rig.iter().enumerate() {
        cam.intrinsics.validate()?;
        if rig[..i].iter().any(|c| c.view_id == cam.view_id) {
            return Err(Error::Config(format!("duplicate view id {:?}", cam.view_id)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn rz(angle: f64, t: [f64; 3]) -> Pose {
        Pose::from_yaw(AxisConvention::ZUp, angle, Vector3::from(t))
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(TAU), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-1e-17), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn compose_with_identity() {
        let p = rz(0.3, [1.0, 2.0, 3.0]);
        assert!(Pose::identity().compose(&p).approx_eq(&p, 1e-12));
        assert!(p.compose(&p.inverse()).approx_eq(&Pose::identity(), 1e-12));
    }

    #[test]
    fn compose_two_quarter_turns() {
        let a = rz(FRAC_PI_2, [1.0, 0.0, 0.0]);
        let b = rz(FRAC_PI_2, [0.0, 0.0, 0.0]);
        assert!(a.compose(&b).approx_eq(&rz(PI, [1.0, 0.0, 0.0]), 1e-12));
    }

    #[test]
    fn inverse_of_translation() {
        let p = Pose::from_translation(Vector3::new(1.0, -2.0, 3.0));
        let inv = p.inverse();
        assert!(inv.approx_eq(&Pose::from_translation(Vector3::new(-1.0, 2.0, -3.0)), 0.0));
        assert!(Pose::identity().inverse().approx_eq(&Pose::identity(), 0.0));
    }

    #[test]
    fn apply_examples() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().apply(&p), p);
        let t = Pose::from_translation(Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(t.apply(&Vector3::zeros()), Vector3::new(0.0, 0.0, 5.0));
        let r = rz(FRAC_PI_2, [0.0; 3]).apply(&Vector3::x());
        assert_abs_diff_eq!(r, Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn yaw_delta_examples() {
        let tol = DEFAULT_TILT_TOLERANCE;
        assert_eq!(Pose::identity().yaw_delta(AxisConvention::Camera, tol).unwrap(), 0.0);
        let p = Pose::from_yaw(AxisConvention::Camera, PI / 6.0, Vector3::zeros());
        assert_abs_diff_eq!(
            p.yaw_delta(AxisConvention::Camera, tol).unwrap(),
            PI / 6.0,
            epsilon = 1e-12
        );
        let a = rz(170f64.to_radians(), [0.0; 3]);
        let b = rz(20f64.to_radians(), [0.0; 3]);
        let d = a.compose(&b).yaw_delta(AxisConvention::ZUp, tol).unwrap();
        assert_abs_diff_eq!(d, -170f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn yaw_delta_rejects_tilt() {
        let tilted = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.01),
            Vector3::zeros(),
        );
        assert!(matches!(
            tilted.yaw_delta(AxisConvention::Camera, DEFAULT_TILT_TOLERANCE),
            Err(Error::WarpTilt { .. })
        ));
        // Tilt about the optical axis is still a tilt for yaw purposes.
        assert!(tilted.yaw_delta(AxisConvention::ZUp, 0.1).is_ok());
        assert!(tilted.yaw_delta(AxisConvention::ZUp, 1e-3).is_err());
    }

    #[test]
    fn level_camera_axes() {
        let r = level_camera_rotation(0.0);
        assert_abs_diff_eq!(r * Vector3::z(), Vector3::x(), epsilon = 1e-12);
        assert_abs_diff_eq!(r * Vector3::x(), -Vector3::y(), epsilon = 1e-12);
        assert_abs_diff_eq!(r * Vector3::y(), -Vector3::z(), epsilon = 1e-12);
        let left = level_camera_rotation(FRAC_PI_2);
        assert_abs_diff_eq!(left * Vector3::z(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let p = rz(0.7, [1.5, -2.25, 0.125]).compose(&Pose::from_yaw(
            AxisConvention::Camera,
            -1.1,
            Vector3::new(0.1, 0.2, 0.3),
        ));
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(serde_json::from_str::<Pose>(r#"{"rotation":[2,0,0,0],"translation":[0,0,0]}"#).is_err());
    }

    #[test]
    fn rig_validation() {
        let k = Intrinsics::new(800.0, 800.0, 800.0, 450.0, 1600.0, 900.0).unwrap();
        let cam = |id: &str| CameraCalib {
            view_id: id.into(),
            extrinsic: Pose::identity(),
            intrinsics: k,
        };
        assert!(validate_rig(&[cam("A"), cam("B")]).is_ok());
        assert!(validate_rig(&[cam("A"), cam("A")]).is_err());
        assert!(validate_rig(&[]).is_err());
        assert!(Intrinsics::new(0.0, 800.0, 0.0, 0.0, 10.0, 10.0).is_err());
    }
}
