use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;

use gaze_core::dataset::synth::default_setup;
use gaze_core::geometry::{
    angles_to_vector, camera_to_world, compute_gaze_label, gaze_point_from_prediction, intersect_ray_plane,
    project_world_to_screen, rotation_from_axis_angle, unproject_screen, vector_to_angles, world_to_camera, Extrinsics,
    GazeAngles, GeometryError, Mat4, MonitorSpec, ScreenPlane, ScreenPoint, Vec3,
};

fn axis_angle(max: f64) -> impl Strategy<Value = Vec3> {
    (-max..max, -max..max, -max..max).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn extrinsics() -> impl Strategy<Value = Extrinsics> {
    (axis_angle(1.5), -500.0..500.0f64, -500.0..500.0f64, -500.0..500.0f64).prop_map(|(w, x, y, z)| {
        Extrinsics::from_rotation_translation(&rotation_from_axis_angle(&w), &Vec3::new(x, y, z)).unwrap()
    })
}

fn monitor() -> impl Strategy<Value = MonitorSpec> {
    (800.0..4000.0f64, 600.0..2500.0f64, 200.0..800.0f64, 150.0..500.0f64)
        .prop_map(|(w, h, wm, hm)| MonitorSpec::new(w, h, wm, hm).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn gaze_vectors_are_unit(p in -FRAC_PI_2..=FRAC_PI_2, y in -PI..=PI) {
        let v = angles_to_vector(GazeAngles::new(p, y)).into_inner();
        prop_assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn angles_survive_vector_round_trip(p in -1.5..1.5f64, y in -3.1..3.1f64) {
        let back = vector_to_angles(&angles_to_vector(GazeAngles::new(p, y))).unwrap();
        prop_assert!((back.pitch - p).abs() < 1e-9);
        prop_assert!((back.yaw - y).abs() < 1e-9);
        prop_assert!(back.is_valid());
    }

    #[test]
    fn forward_vectors_survive_angle_round_trip(x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.01..1.0f64) {
        let v = Vec3::new(x, y, z).normalize();
        let back = angles_to_vector(vector_to_angles(&v).unwrap()).into_inner();
        prop_assert!((back - v).norm() < 1e-9);
    }

    #[test]
    fn screen_mapping_is_invertible(m in monitor(), x in -500.0..5000.0f64, y in -500.0..3000.0f64) {
        let p = ScreenPoint::new(x, y);
        let back = project_world_to_screen(&unproject_screen(p, &m), &m).unwrap();
        prop_assert!((back.x - x).abs() < 1e-9 && (back.y - y).abs() < 1e-9);
    }

    #[test]
    fn camera_world_maps_are_inverse(e in extrinsics(), x in -1e3..1e3f64, y in -1e3..1e3f64, z in -1e3..1e3f64) {
        let p = Vec3::new(x, y, z);
        prop_assert!((camera_to_world(&world_to_camera(&p, &e), &e) - p).norm() < 1e-9);
        prop_assert!((world_to_camera(&camera_to_world(&p, &e), &e) - p).norm() < 1e-9);
        prop_assert!(e.check().is_ok());
        prop_assert!(e.inverse().check().is_ok());
    }

    #[test]
    fn label_round_trip_reproduces_pixel(
        cx in -0.15..0.15f64, cy in -0.15..0.15f64, cz in 400.0..900.0f64,
        w in axis_angle(0.4), px in 0.0..1.0f64, py in 0.0..1.0f64,
    ) {
        let (m, e, _) = default_setup();
        let c = Vec3::new(cx * cz, cy * cz, cz);
        prop_assume!(camera_to_world(&c, &e).z < -100.0);
        let r = rotation_from_axis_angle(&w);
        let p = ScreenPoint::new(px * m.w, py * m.h);
        let g = compute_gaze_label(p, &c, &r, &e, &m).unwrap();
        let plane = ScreenPlane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let back = gaze_point_from_prediction(g, &r, &c, &e, &m, &plane).unwrap();
        prop_assert!((back.x - p.x).hypot(back.y - p.y) < 1e-6);
    }
}

#[test]
fn default_plane_is_z_zero() {
    let p = ScreenPlane::default();
    assert_eq!(p.coefficients().as_slice(), &[0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn rays_away_from_the_screen_have_no_hit() {
    let plane = ScreenPlane::default();
    let origin = Vec3::new(0.0, 0.0, -500.0);
    let hit = intersect_ray_plane(&origin, &Vec3::new(0.0, 0.1, 1.0), &plane).unwrap();
    assert!(hit.z.abs() < 1e-12);
    assert!(matches!(
        intersect_ray_plane(&origin, &Vec3::new(0.0, 0.0, -1.0), &plane),
        Err(GeometryError::BehindOrigin(_))
    ));
    assert!(matches!(
        intersect_ray_plane(&origin, &Vec3::new(1.0, 0.0, 0.0), &plane),
        Err(GeometryError::Parallel)
    ));
}

#[test]
fn malformed_extrinsics_are_rejected() {
    let mut m = Mat4::identity();
    m[(0, 0)] = 2.0;
    assert!(Extrinsics::from_matrix(m).is_err());
    let mut m = Mat4::identity();
    m[(3, 0)] = 1.0;
    assert!(Extrinsics::from_matrix(m).is_err());
    let reflection = Mat4::from_diagonal(&nalgebra::Vector4::new(-1.0, 1.0, 1.0, 1.0));
    assert!(Extrinsics::from_matrix(reflection).is_err());
}

#[test]
fn extrinsics_json_round_trip() {
    let (_, e, _) = default_setup();
    let text = serde_json::to_string(&e).unwrap();
    let back: Extrinsics = serde_json::from_str(&text).unwrap();
    assert_eq!(back, e);
}
