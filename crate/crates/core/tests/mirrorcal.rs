use proptest::prelude::*;

use gaze_core::geometry::Vec3;
use gaze_core::mirrorcal::{mirror_cost, reflect_point, solve_extrinsics, MirrorError, MirrorPlane, ObservationFile, SyntheticMirrorScene};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reflection_is_an_isometric_involution(n in vec3(1.0), d in 1.0..1000.0f64, p in vec3(1e3), q in vec3(1e3)) {
        prop_assume!(n.norm() > 1e-3);
        let plane = MirrorPlane::new(n, d);
        let (rp, rq) = (reflect_point(&p, &plane), reflect_point(&q, &plane));
        prop_assert!((reflect_point(&rp, &plane) - p).norm() < 1e-9);
        prop_assert!(((rp - rq).norm() - (p - q).norm()).abs() < 1e-9);
    }
}

#[test]
fn noisy_fit_is_no_worse_than_the_truth() {
    for seed in 0..4 {
        let scene = SyntheticMirrorScene::generate(5, 0.3, 40 + seed);
        let fit = scene.solve().unwrap();
        let truth = mirror_cost(&scene.extrinsics, &scene.planes, &scene.observations, &scene.k, &scene.world_points());
        assert!(fit.cost <= truth + 1e-9, "seed {seed}: {} > {truth}", fit.cost);
    }
}

#[test]
fn residual_ignores_observation_order() {
    let scene = SyntheticMirrorScene::generate(4, 0.2, 7);
    let fit = scene.solve().unwrap();
    let mut obs = scene.observations.clone();
    obs.reverse();
    let again = solve_extrinsics(&obs, &scene.k, &scene.board, &scene.monitor).unwrap();
    assert!((fit.rms_px - again.rms_px).abs() < 1e-9, "{} vs {}", fit.rms_px, again.rms_px);
    // the solver stops on relative cost, so the pose only agrees to that precision
    let dt = (fit.extrinsics.translation() - again.extrinsics.translation()).norm();
    assert!(dt < 1e-3, "{dt} mm");
}

#[test]
fn malformed_observations_are_reported() {
    let scene = SyntheticMirrorScene::generate(3, 0.0, 8);
    let mut obs = scene.observations.clone();
    obs[1].corners.pop();
    assert!(matches!(
        solve_extrinsics(&obs, &scene.k, &scene.board, &scene.monitor),
        Err(MirrorError::CornerCount { image: 1, .. })
    ));
    assert!(matches!(
        solve_extrinsics(&scene.observations[..2], &scene.k, &scene.board, &scene.monitor),
        Err(MirrorError::TooFewPoses(2))
    ));
}

#[test]
fn observation_files_round_trip_through_json() {
    let scene = SyntheticMirrorScene::generate(3, 0.1, 9);
    let text = serde_json::to_string(&scene.observation_file()).unwrap();
    let back: ObservationFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back, scene.observation_file());
    let fit = solve_extrinsics(&back.images, &back.intrinsics, &back.board.into(), &back.monitor.unwrap()).unwrap();
    assert!((fit.extrinsics.translation() - scene.extrinsics.translation()).norm() < 5.0);
}
