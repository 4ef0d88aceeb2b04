use std::path::Path;

use proptest::prelude::*;

use gaze_core::dataset::metrics::angular_error;
use gaze_core::dataset::protocol::{gen_phase1_targets, gen_phase2_targets, gen_phase3_paths};
use gaze_core::dataset::synth::{default_setup, synthetic_subject, SynthConfig};
use gaze_core::dataset::{read_subject, read_subject_any, read_subject_with, stored_schema, validate, write_subject, write_subject_with, DatasetIoError, Schema};
use gaze_core::geometry::GazeAngles;

fn small(samples: usize, sessions: usize) -> gaze_core::dataset::SubjectFile {
    synthetic_subject(&SynthConfig { samples, sessions, seed: 11, ..Default::default() })
}

fn schema_error(path: &Path, schema: Schema) -> gaze_core::dataset::SchemaError {
    match read_subject_with(path, schema) {
        Err(DatasetIoError::Schema(e)) => e,
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn small_files_round_trip_with_and_without_compression() {
    let t = tempfile::tempdir().unwrap();
    let f = small(3, 2);
    assert_eq!(f.extrinsics.shape(), &[2, 3, 4]);
    for compress in [true, false] {
        let p = t.path().join(format!("s{compress}.h5"));
        write_subject_with(&p, &f, compress).unwrap();
        assert_eq!(read_subject_any(&p).unwrap(), f);
    }
}

#[test]
fn empty_files_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("e.h5");
    let f = gaze_core::dataset::SubjectFile::zeros(0, 1, Schema::STANDARD);
    write_subject(&p, &f).unwrap();
    assert_eq!(read_subject(&p).unwrap(), f);
}

#[test]
fn stored_schema_reports_patch_sizes() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("s.h5");
    write_subject(&p, &small(2, 1)).unwrap();
    assert_eq!(stored_schema(&p).unwrap(), Schema { face_size: 32, eye_size: 8 });
    // reading with the standard sizes flags every image key
    let e = schema_error(&p, Schema::STANDARD);
    for key in ["face_color", "face_depth", "left_eye_color", "right_eye_depth"] {
        assert!(e.mentions(key), "{e}");
    }
    assert!(!e.mentions("gaze"));
}

#[test]
fn missing_wrong_dtype_and_wrong_shape_keys_are_named() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("s.h5");
    let f = small(4, 1);
    write_subject(&p, &f).unwrap();
    let schema = f.schema();
    {
        let h = hdf5::File::open_rw(&p).unwrap();
        h.unlink("gaze").unwrap();
        h.unlink("on_grid").unwrap();
        h.new_dataset_builder().with_data(&ndarray::Array1::<f32>::zeros(4)).create("on_grid").unwrap();
        h.unlink("face_center").unwrap();
        h.new_dataset_builder().with_data(&ndarray::Array2::<f64>::zeros((4, 2))).create("face_center").unwrap();
    }
    let e = schema_error(&p, schema);
    assert_eq!(e.issues.len(), 3, "{e}");
    for key in ["gaze", "on_grid", "face_center"] {
        assert!(e.mentions(key), "{e}");
    }
    let text = e.to_string();
    assert!(text.contains("missing") && text.contains("dtype") && text.contains("shape"), "{text}");
}

#[test]
fn synthetic_subjects_are_valid_and_reproducible() {
    let a = small(300, 2);
    assert!(validate(&a).is_empty(), "{:?}", validate(&a));
    assert_eq!(a, small(300, 2));
    let other = synthetic_subject(&SynthConfig { samples: 300, sessions: 2, seed: 12, ..Default::default() });
    assert_ne!(a, other);
}

#[test]
fn protocol_targets_are_pure_and_on_screen() {
    let (m, _, _) = default_setup();
    for seed in 0..5 {
        let p1 = gen_phase1_targets(&m, seed);
        let p2 = gen_phase2_targets(&m, seed);
        let p3 = gen_phase3_paths(&m, seed);
        assert_eq!(p1, gen_phase1_targets(&m, seed));
        assert_eq!(p2, gen_phase2_targets(&m, seed));
        assert_eq!(p3, gen_phase3_paths(&m, seed));
        assert!(p1.iter().chain(&p2).all(|t| m.contains(t.point)));
        for path in &p3 {
            for k in 0..=100 {
                let q = path.sample(path.duration_s * k as f64 / 100.0);
                assert!(m.contains(q), "{q:?}");
            }
        }
    }
}

fn angles() -> impl Strategy<Value = GazeAngles> {
    (-1.5..1.5f64, -3.1..3.1f64).prop_map(|(p, y)| GazeAngles::new(p, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn angular_error_is_a_metric(a in angles(), b in angles(), c in angles()) {
        let ab = angular_error(a, b);
        prop_assert!(angular_error(a, a).abs() < 1e-6);
        prop_assert!((ab - angular_error(b, a)).abs() < 1e-12);
        prop_assert!((0.0..=180.0).contains(&ab));
        prop_assert!(ab <= angular_error(a, c) + angular_error(c, b) + 1e-9);
    }

    #[test]
    fn pure_pitch_offsets_are_measured_exactly(yaw in -3.1..3.1f64, p in -0.7..0.7f64, dp in -0.7..0.7f64) {
        let e = angular_error(GazeAngles::new(p, yaw), GazeAngles::new(p + dp, yaw));
        prop_assert!((e - dp.abs().to_degrees()).abs() < 1e-6);
    }
}
