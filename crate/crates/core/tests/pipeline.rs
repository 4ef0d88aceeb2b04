use gaze_core::dataset::synth::{synthetic_subject, SynthConfig};
use gaze_core::filtering::FilterKind;
use gaze_core::fusion::io::KIND_TRANSFORMER;
use gaze_core::fusion::{EncoderVariant, HyperParams};
use gaze_core::pipeline::{evaluate, replay, GazeModel, Predictor, ReplayConfig, StubConfig};
use gaze_core::geometry::GazeAngles;
use gaze_core::subjectcal::{estimate_offset_only, CalSample};

fn subject() -> gaze_core::dataset::SubjectFile {
    synthetic_subject(&SynthConfig { samples: 264, sessions: 2, seed: 5, ..Default::default() })
}

#[test]
fn rows_follow_file_order() {
    let f = subject();
    let rows = replay(&f, &Predictor::Stub(StubConfig::default()), &ReplayConfig::default()).unwrap();
    assert_eq!(rows.len(), f.len());
    for (i, r) in rows.iter().enumerate() {
        let m = f.meta(i);
        assert_eq!((r.sample, r.session, r.recording), (i, m.recording_session, m.recording_index));
    }
    let s = evaluate(&rows).unwrap();
    assert_eq!(s.failed, 0);
    assert!(s.phase_mean_e_deg.iter().all(|p| p == &Some(0.0)));
}

#[test]
fn noisy_filtered_replay_is_deterministic() {
    let f = subject();
    let p = Predictor::Stub(StubConfig { noise_deg: 2.0, seed: 3, ..Default::default() });
    for filter in [FilterKind::None, FilterKind::Avg3, FilterKind::Kalman] {
        let cfg = ReplayConfig { filter, ..Default::default() };
        assert_eq!(replay(&f, &p, &cfg).unwrap(), replay(&f, &p, &cfg).unwrap());
    }
}

#[test]
fn model_replay_is_deterministic() {
    let f = subject().select(&(0..20).collect::<Vec<_>>());
    let hp = HyperParams { n_tokens: 5, ..HyperParams::toy(EncoderVariant::B2T) };
    let m = Predictor::Model(Box::new(GazeModel::random(KIND_TRANSFORMER, &hp, 2).unwrap()));
    let a = replay(&f, &m, &ReplayConfig::default()).unwrap();
    assert_eq!(a.len(), 20);
    let b = replay(&f, &m, &ReplayConfig::default()).unwrap();
    let bits = |rows: &[gaze_core::pipeline::ReplayRow]| rows.iter().map(|r| (r.raw_pitch.to_bits(), r.raw_yaw.to_bits(), r.error.clone())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn calibrating_on_offset_rows_removes_the_offset() {
    let f = subject();
    let p = Predictor::Stub(StubConfig { offset_pitch_deg: 1.5, offset_yaw_deg: -0.5, ..Default::default() });
    let rows = replay(&f, &p, &ReplayConfig::default()).unwrap();
    let samples: Vec<CalSample> = rows
        .iter()
        .map(|r| CalSample { predicted: GazeAngles::new(r.raw_pitch, r.raw_yaw), truth: GazeAngles::new(r.gt_pitch, r.gt_yaw) })
        .collect();
    let bias = estimate_offset_only(&samples).unwrap().bias;
    let fixed = replay(&f, &p, &ReplayConfig { bias, ..Default::default() }).unwrap();
    let s = evaluate(&fixed).unwrap();
    assert!(s.mean_e_deg < 1e-6, "{}", s.mean_e_deg);
}

#[test]
fn bad_stub_configs_are_rejected() {
    let f = subject();
    let p = Predictor::Stub(StubConfig { noise_deg: -1.0, ..Default::default() });
    assert!(replay(&f, &p, &ReplayConfig::default()).is_err());
}
