#![allow(dead_code)]

use nalgebra::{Matrix4, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use temporal2d::geometry::level_camera_rotation;
use temporal2d::simworld::{generate_scene, render_labels, Scene, SceneConfig, SceneLabels};
use temporal2d::{AxisConvention, Box3D, CameraCalib, FrameContext, Intrinsics, Pose, Size3};

pub fn intrinsics() -> Intrinsics {
    Intrinsics::new(800.0, 800.0, 800.0, 450.0, 1600.0, 900.0).unwrap()
}

pub fn camera(view_id: &str, azimuth_deg: f64) -> CameraCalib {
    let az = azimuth_deg.to_radians();
    CameraCalib {
        view_id: view_id.into(),
        extrinsic: Pose::new(
            level_camera_rotation(az),
            Vector3::new(az.cos(), az.sin(), 1.5),
        ),
        intrinsics: intrinsics(),
    }
}

pub fn rig() -> Vec<CameraCalib> {
    [
        ("CAM_FRONT", 0.0),
        ("CAM_FRONT_RIGHT", -55.0),
        ("CAM_FRONT_LEFT", 55.0),
        ("CAM_BACK", 180.0),
        ("CAM_BACK_LEFT", 110.0),
        ("CAM_BACK_RIGHT", -110.0),
    ]
    .iter()
    .map(|(id, az)| camera(id, *az))
    .collect()
}

pub fn frame(t: f64, x: f64, y: f64, yaw: f64) -> FrameContext {
    FrameContext {
        timestamp: t,
        ego_pose: Pose::from_yaw(AxisConvention::ZUp, yaw, Vector3::new(x, y, 0.0)),
        rig: rig(),
    }
}

/// Rotation matrix of a unit quaternion written out term by term.
pub fn quat_matrix(w: f64, x: f64, y: f64, z: f64) -> [[f64; 3]; 3] {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn homogeneous(p: &Pose) -> Matrix4<f64> {
    let [w, x, y, z] = p.wxyz();
    let r = quat_matrix(w, x, y, z);
    let t = p.translation();
    Matrix4::new(
        r[0][0], r[0][1], r[0][2], t.x,
        r[1][0], r[1][1], r[1][2], t.y,
        r[2][0], r[2][1], r[2][2], t.z,
        0.0, 0.0, 0.0, 1.0,
    )
}

/// 4×4 inverse by cofactor expansion.
pub fn inverse4(m: &Matrix4<f64>) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    let minor = |r: usize, c: usize| {
        let mut v = [0.0; 9];
        let mut k = 0;
        for i in 0..4 {
            for j in 0..4 {
                if i != r && j != c {
                    v[k] = m[(i, j)];
                    k += 1;
                }
            }
        }
        v[0] * (v[4] * v[8] - v[5] * v[7]) - v[1] * (v[3] * v[8] - v[5] * v[6])
            + v[2] * (v[3] * v[7] - v[4] * v[6])
    };
    let mut det = 0.0;
    for j in 0..4 {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[(0, j)] * minor(0, j);
    }
    for i in 0..4 {
        for j in 0..4 {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[(j, i)] = sign * minor(i, j) / det;
        }
    }
    out
}

pub fn max_abs(m: &Matrix4<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

prop_compose! {
    pub fn arb_pose()(
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.1..3.1f64,
        t in prop::array::uniform3(-50.0..50.0f64),
    ) -> Pose {
        let axis = Vector3::from(axis);
        let rot = if axis.norm() < 1e-6 {
            UnitQuaternion::identity()
        } else {
            UnitQuaternion::from_scaled_axis(axis.normalize() * angle)
        };
        Pose::new(rot, Vector3::from(t))
    }
}

prop_compose! {
    pub fn arb_planar_pose()(
        yaw in -3.1..3.1f64,
        x in -30.0..30.0f64,
        y in -30.0..30.0f64,
    ) -> Pose {
        Pose::from_yaw(AxisConvention::ZUp, yaw, Vector3::new(x, y, 0.0))
    }
}

prop_compose! {
    /// A box in front of a 1600×900 camera with every corner at depth > 1 m.
    pub fn arb_visible_box()(
        x in -8.0..8.0f64,
        y in -1.0..2.0f64,
        z in 12.0..60.0f64,
        w in 0.4..3.0f64,
        h in 0.8..3.5f64,
        l in 0.4..12.0f64,
        yaw in -3.1..3.1f64,
    ) -> Box3D {
        Box3D::new(Vector3::new(x, y, z), Size3::new(w, h, l), yaw).unwrap()
    }
}

pub fn scene(config: SceneConfig) -> (Scene, SceneLabels) {
    let scene = generate_scene(&config).unwrap();
    let labels = render_labels(&scene);
    (scene, labels)
}

pub fn param_distance(a: &Box3D, b: &Box3D) -> f64 {
    let (p, q) = (a.to_params(), b.to_params());
    (0..7)
        .map(|k| {
            if k == 6 {
                temporal2d::geometry::wrap_angle(p[k] - q[k]).abs()
            } else {
                (p[k] - q[k]).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Camera-frame point of box-local coordinates `(a, b, c)`, each in `[-1, 1]`.
pub fn local_to_camera(bx: &Box3D, a: f64, b: f64, c: f64) -> Vector3<f64> {
    let (s, co) = bx.yaw.sin_cos();
    let right = Vector3::new(co, 0.0, s);
    let down = Vector3::new(0.0, 1.0, 0.0);
    let forward = Vector3::new(-s, 0.0, co);
    bx.center
        + right * (a * bx.size.w / 2.0)
        + down * (b * bx.size.h / 2.0)
        + forward * (c * bx.size.l / 2.0)
}

pub fn pinhole(k: &Intrinsics, p: &Vector3<f64>) -> (f64, f64) {
    (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}

/// A point drawn uniformly by area from the box surface.
pub fn surface_sample(rng: &mut ChaCha8Rng, bx: &Box3D) -> Vector3<f64> {
    let (w, h, l) = (bx.size.w, bx.size.h, bx.size.l);
    // Faces normal to the w, h and l axes.
    let areas = [h * l, w * l, w * h];
    let pick = rng.gen_range(0.0..areas.iter().sum::<f64>());
    let axis = if pick < areas[0] { 0 } else if pick < areas[0] + areas[1] { 1 } else { 2 };
    let mut v = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
    v[axis] = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    local_to_camera(bx, v[0], v[1], v[2])
}
