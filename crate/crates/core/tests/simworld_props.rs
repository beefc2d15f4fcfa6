mod common;

use common::*;
use proptest::prelude::*;
use temporal2d::boxes::deduce_box2d;
use temporal2d::simworld::{
    generate_scene, jitter_labels, load_labels, load_scene, render_labels, save_labels, save_scene,
    SceneConfig,
};
use temporal2d::warp::{visible_box2d, WarpConfig};
use temporal2d::Error;

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn generation_ignores_thread_count() {
    let cfg = SceneConfig { seed: 9, n_objects: 80, ..Default::default() };
    let one = pool(1).install(|| {
        let s = generate_scene(&cfg).unwrap();
        let l = render_labels(&s);
        (s, l)
    });
    let four = pool(4).install(|| {
        let s = generate_scene(&cfg).unwrap();
        let l = render_labels(&s);
        (s, l)
    });
    assert_eq!(one.0, four.0);
    assert_eq!(one.1, four.1);
    let j1 = pool(1).install(|| jitter_labels(&one.1, 0.05, 3).unwrap());
    let j4 = pool(4).install(|| jitter_labels(&four.1, 0.05, 3).unwrap());
    assert_eq!(j1, j4);
}

#[test]
fn files_round_trip_and_regenerate_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, labels) = scene(SceneConfig { seed: 4, ..Default::default() });
    let sp = dir.path().join("scene.json");
    let lp = dir.path().join("labels.json");
    save_scene(&scene, &sp).unwrap();
    save_labels(&labels, &lp).unwrap();
    let back = load_scene(&sp).unwrap();
    assert_eq!(back, scene);
    assert_eq!(render_labels(&back), labels);
    assert_eq!(load_labels(&lp).unwrap(), labels);

    let text = std::fs::read_to_string(&sp).unwrap();
    std::fs::write(&sp, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_scene(&sp), Err(Error::Schema(_))));
    std::fs::write(&sp, text.replacen("\"version\": 1", "\"version\": 99", 1)).unwrap();
    assert!(matches!(load_scene(&sp), Err(Error::Schema(_))));
    assert!(matches!(load_scene(&dir.path().join("missing.json")), Err(Error::Io(_))));
}

#[test]
fn movers_cross_into_neighbouring_cameras() {
    for seed in 0..5 {
        let (scene, labels) = scene(SceneConfig { seed, ..Default::default() });
        let crossing = scene.tracks.iter().filter(|t| t.is_moving()).any(|t| {
            (1..scene.frames.len()).any(|k| {
                let views = |f: usize| labels.observations(f, t.track_id).into_iter().map(|(v, _)| v).collect::<Vec<_>>();
                let (a, b) = (views(k - 1), views(k));
                b.iter().any(|v| !a.contains(v)) && !a.is_empty()
            })
        });
        assert!(crossing, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn labels_are_rederivable(seed in any::<u64>(), n in 5usize..80, fraction in 0.0..1.0f64) {
        let (scene, labels) = scene(SceneConfig { seed, n_objects: n, moving_fraction: fraction, ..Default::default() });
        let movers = scene.tracks.iter().filter(|t| t.is_moving()).count();
        prop_assert_eq!(movers, (fraction * n as f64).round() as usize);
        let vis = WarpConfig::default();
        for (f, fl) in scene.frames.iter().zip(&labels.frames) {
            for (cam, vl) in f.rig.iter().zip(&fl.views) {
                prop_assert_eq!(&cam.view_id, &vl.view_id);
                for o in &vl.objects {
                    let tr = scene.track(o.track_id).unwrap();
                    let truth = tr.box_in_camera(f.timestamp, &f.ego_pose.compose(&cam.extrinsic));
                    prop_assert!(param_distance(&truth, &o.box3d) < 1e-12);
                    prop_assert_eq!(o.box2d, deduce_box2d(&o.box3d, &cam.intrinsics).unwrap());
                    prop_assert!(visible_box2d(&o.box3d, cam, &vis).is_some());
                }
                for tr in &scene.tracks {
                    let b = tr.box_in_camera(f.timestamp, &f.ego_pose.compose(&cam.extrinsic));
                    let labeled = vl.objects.iter().any(|o| o.track_id == tr.track_id);
                    prop_assert_eq!(labeled, visible_box2d(&b, cam, &vis).is_some());
                }
            }
        }
        for tr in &scene.tracks {
            let t = 7.25;
            let expect = nalgebra::Vector3::from(tr.position) + nalgebra::Vector3::from(tr.velocity) * t;
            prop_assert_eq!(tr.position_at(t), expect);
        }
    }

    #[test]
    fn jitter_is_bounded_valid_and_seeded(seed in any::<u64>(), scale in 0.0..0.3f64) {
        let (_, labels) = scene(SceneConfig { seed: 1, n_objects: 20, ..Default::default() });
        let j = jitter_labels(&labels, scale, seed).unwrap();
        prop_assert_eq!(&j, &jitter_labels(&labels, scale, seed).unwrap());
        for (a, b) in labels.frames.iter().flat_map(|f| &f.views).flat_map(|v| &v.objects)
            .zip(j.frames.iter().flat_map(|f| &f.views).flat_map(|v| &v.objects))
        {
            prop_assert_eq!(a.track_id, b.track_id);
            prop_assert_eq!(a.box3d, b.box3d);
            let (p, q) = (a.box2d, b.box2d);
            prop_assert!(q.x_tl <= q.x_br && q.y_tl <= q.y_br);
            let tol = 1e-9 * (1.0 + p.center().norm());
            prop_assert!((q.center().x - p.center().x).abs() <= scale * p.width() + tol);
            prop_assert!((q.center().y - p.center().y).abs() <= scale * p.height() + tol);
            prop_assert!((q.width() / p.width() - 1.0).abs() <= scale + 1e-9);
            prop_assert!((q.height() / p.height() - 1.0).abs() <= scale + 1e-9);
        }
    }
}
