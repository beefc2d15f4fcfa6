mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::{Vector3, Vector4};
use proptest::prelude::*;
use temporal2d::geometry::wrap_angle;
use temporal2d::warp::{homography, warp_box};
use temporal2d::{AxisConvention, Pose};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
        let lhs = a.compose(&b).compose(&c);
        let rhs = a.compose(&b.compose(&c));
        prop_assert!(max_abs(&(lhs.to_matrix() - rhs.to_matrix())) < 1e-9);
    }

    #[test]
    fn compose_applies_right_to_left(a in arb_pose(), b in arb_pose(), x in prop::array::uniform3(-20.0..20.0f64)) {
        let x = Vector3::from(x);
        let d = a.compose(&b).apply(&x) - a.apply(&b.apply(&x));
        prop_assert!(d.norm() < 1e-9);
    }

    #[test]
    fn matrix_oracle(a in arb_pose(), b in arb_pose(), x in prop::array::uniform3(-20.0..20.0f64)) {
        let (ma, mb) = (homogeneous(&a), homogeneous(&b));
        prop_assert!(max_abs(&(a.to_matrix() - ma)) < 1e-12);
        prop_assert!(max_abs(&(homogeneous(&a.compose(&b)) - ma * mb)) < 1e-9);
        prop_assert!(max_abs(&(homogeneous(&a.inverse()) - inverse4(&ma))) < 1e-9);
        let hx = ma * Vector4::new(x[0], x[1], x[2], 1.0);
        let px = a.apply(&Vector3::from(x));
        prop_assert!((hx.xyz() - px).norm() < 1e-9);
    }

    #[test]
    fn inverse_round_trips(a in arb_pose()) {
        prop_assert!(a.compose(&a.inverse()).approx_eq(&Pose::identity(), 1e-9));
        prop_assert!(a.inverse().compose(&a).approx_eq(&Pose::identity(), 1e-9));
        prop_assert!(a.inverse().inverse().approx_eq(&a, 1e-9));
    }

    #[test]
    fn quaternion_stays_canonical(a in arb_pose(), b in arb_pose()) {
        for p in [a.compose(&b), a.inverse()] {
            let q = p.wxyz();
            prop_assert!(q[0] >= 0.0);
            prop_assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_yaw_deltas_add(y1 in -3.1..3.1f64, y2 in -3.1..3.1f64) {
        for conv in [AxisConvention::Camera, AxisConvention::ZUp] {
            let a = Pose::from_yaw(conv, y1, Vector3::new(1.0, 2.0, 3.0));
            let b = Pose::from_yaw(conv, y2, Vector3::new(-4.0, 0.5, 2.0));
            let d = a.compose(&b).yaw_delta(conv, 1e-9).unwrap();
            prop_assert!(wrap_angle(d - wrap_angle(y1 + y2)).abs() < 1e-9);
        }
    }

    #[test]
    fn homographies_compose(p0 in arb_planar_pose(), p1 in arb_planar_pose(), p2 in arb_planar_pose(),
                            i in 0usize..6, j in 0usize..6, k in 0usize..6) {
        let mk = |t: f64, p: &Pose| temporal2d::FrameContext { timestamp: t, ego_pose: p.clone(), rig: rig() };
        let (ft, fu, fv) = (mk(0.0, &p0), mk(0.5, &p1), mk(1.0, &p2));
        let (c, c1, c2) = (&ft.rig[i], &fu.rig[j], &fv.rig[k]);
        let chained = homography(c1, &fu, &fv, c2).compose(&homography(c, &ft, &fu, c1));
        let direct = homography(c, &ft, &fv, c2);
        prop_assert!(chained.approx_eq(&direct, 1e-9));
    }

    #[test]
    fn warp_round_trips(p0 in arb_planar_pose(), p1 in arb_planar_pose(), i in 0usize..6, j in 0usize..6,
                        b in arb_visible_box()) {
        let mk = |t: f64, p: &Pose| temporal2d::FrameContext { timestamp: t, ego_pose: p.clone(), rig: rig() };
        let (ft, fu) = (mk(0.0, &p0), mk(1.5, &p1));
        let there = homography(&ft.rig[i], &ft, &fu, &fu.rig[j]);
        let back = homography(&fu.rig[j], &fu, &ft, &ft.rig[i]);
        let w = warp_box(&warp_box(&b, &there).unwrap(), &back).unwrap();
        prop_assert!(param_distance(&w, &b) < 1e-9);
        prop_assert_eq!(w.size, b.size);
    }
}

#[test]
fn hand_oracle_sanity() {
    let p = Pose::from_yaw(AxisConvention::ZUp, std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
    let m = homogeneous(&p);
    assert_abs_diff_eq!(m[(0, 1)], -1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(m[(1, 0)], 1.0, epsilon = 1e-15);
    let inv = inverse4(&m);
    assert!(max_abs(&(inv * m - nalgebra::Matrix4::identity())) < 1e-15);
}
