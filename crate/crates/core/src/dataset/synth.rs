//! Geometrically consistent fake subjects for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{gen_phase1_targets, gen_phase2_targets, gen_phase3_paths};
use super::{SampleMeta, Schema, SubjectFile, RECORDINGS};
use crate::camera::{Intrinsics, Pose};
use crate::geometry::{
    camera_to_world, compute_gaze_label, rotation_from_axis_angle, Extrinsics, Mat3, MonitorSpec, ScreenPoint, Vec3,
};
use crate::normalization::{
    compute_face_center, compute_normalization, normalized_head_rotation, project_model, warp_landmarks, FaceModel,
    NormParams, LEFT_EYE, NOSE, RIGHT_EYE,
};

/// 27" 4K monitor with a camera centered 30 mm below its bottom edge,
/// tilted up towards the user.
pub fn default_setup() -> (MonitorSpec, Extrinsics, Intrinsics) {
    let m = MonitorSpec::new(3840.0, 2160.0, 597.0, 336.0).expect("valid monitor");
    let facing = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, -1.0));
    let rotation = rotation_from_axis_angle(&Vec3::new(-0.25, 0.0, 0.0)) * facing;
    let center = Vec3::new(0.0, m.height_mm / 2.0 + 30.0, -20.0);
    let e = Extrinsics::from_rotation_translation(&rotation, &(-(rotation * center))).expect("rotation");
    let k = Intrinsics::new(1400.0, 1400.0, 960.0, 540.0).expect("valid intrinsics");
    (m, e, k)
}

/// A face center in camera coordinates at 400–900 mm that lies on the
/// user's side of the screen.
pub fn random_face_center(rng: &mut impl Rng, e: &Extrinsics) -> Vec3 {
    loop {
        let z = rng.random_range(400.0..900.0);
        let c = Vec3::new(rng.random_range(-0.15..0.15) * z, rng.random_range(-0.15..0.15) * z, z);
        if camera_to_world(&c, e).z < -100.0 {
            return c;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub sessions: usize,
    pub schema: Schema,
    pub seed: u64,
    /// Fill the image arrays with noise; otherwise they stay black.
    pub images: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            sessions: 1,
            schema: Schema {
                face_size: 32,
                eye_size: 8,
            },
            seed: 0,
            images: true,
        }
    }
}

fn target_for(recording: i64, in_recording: i64, p1: &[super::protocol::Target], p2: &[super::protocol::Target], p3: &[super::protocol::CirclePath]) -> (ScreenPoint, bool) {
    match recording {
        0..=99 => (p1[recording as usize].point, p1[recording as usize].on_grid),
        100..=121 => (p2[(recording - 100) as usize].point, true),
        _ => (p3[(recording - 122) as usize].sample(in_recording as f64 / 30.0), false),
    }
}

/// Builds `cfg.samples` samples. Sample `i` belongs to recording
/// `i mod 132` and session `i mod sessions`; labels are derived from the
/// on-screen targets through the stored geometry.
pub fn synthetic_subject(cfg: &SynthConfig) -> SubjectFile {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (m, e0, k) = default_setup();
    let sessions = cfg.sessions.max(1);
    let extrinsics: Vec<Extrinsics> = (0..sessions)
        .map(|s| {
            let jitter = rotation_from_axis_angle(&Vec3::new(0.01 * s as f64, -0.005 * s as f64, 0.0));
            Extrinsics::from_rotation_translation(&(jitter * e0.rotation()), &(e0.translation() + Vec3::new(2.0 * s as f64, 0.0, 0.0)))
                .expect("rotation")
        })
        .collect();
    let monitors = vec![m; sessions];
    let plans: Vec<_> = (0..sessions as u64)
        .map(|s| {
            let seed = cfg.seed.wrapping_mul(31).wrapping_add(s);
            (gen_phase1_targets(&m, seed), gen_phase2_targets(&m, seed), gen_phase3_paths(&m, seed))
        })
        .collect();
    let model = FaceModel::default();
    let params = NormParams::default();
    let lm_scale = cfg.schema.face_size as f64 / params.face_patch as f64;
    let mut metas = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let session = i % sessions;
        let j = i / sessions;
        let recording = (j as i64) % RECORDINGS;
        let in_recording = (j / RECORDINGS as usize) as i64;
        let e = &extrinsics[session];
        let (p1, p2, p3) = &plans[session];
        let (target, on_grid) = target_for(recording, in_recording, p1, p2, p3);
        // labels are derived from the stored (f32) target
        let stored = [target.x as f32, target.y as f32];
        let target = ScreenPoint {
            x: stored[0] as f64,
            y: stored[1] as f64,
        };
        let meta = loop {
            let c = random_face_center(&mut rng, e);
            let head = rotation_from_axis_angle(&Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.2..0.2),
            ));
            let p = &model.points;
            let mean = (p[RIGHT_EYE] + p[LEFT_EYE] + p[NOSE]) / 3.0;
            let pose = Pose::new(head, c - head * mean);
            debug_assert!((compute_face_center(&pose, &model) - c).norm() < 1e-9);
            let Ok(n) = compute_normalization(&pose, &c, &k, &params) else { continue };
            let Ok(lm) = project_model(&model, &pose, &k) else { continue };
            let Ok(warped) = warp_landmarks(&lm, &n.warp) else { continue };
            let Ok(gaze) = compute_gaze_label(target, &c, &n.rotation, e, &m) else { continue };
            let Ok(hr) = normalized_head_rotation(&pose, &n.rotation) else { continue };
            let mut face_landmarks = [[0f32; 2]; 5];
            let mut inside = true;
            for (o, q) in face_landmarks.iter_mut().zip(warped.points()) {
                *o = [(q.x * lm_scale) as f32, (q.y * lm_scale) as f32];
                inside &= o.iter().all(|v| (0.0..=cfg.schema.face_size as f32).contains(v));
            }
            if !inside {
                continue;
            }
            let phase3 = recording >= 122;
            break SampleMeta {
                face_center: [c.x, c.y, c.z],
                face_landmarks,
                face_transformation: std::array::from_fn(|r| std::array::from_fn(|col| n.rotation[(r, col)])),
                gaze: [gaze.pitch, gaze.yaw],
                gaze_point: stored,
                head_rot_norm: hr.to_array(),
                in_recording_index: in_recording,
                mouse_distance: if recording < 100 || phase3 { rng.random_range(0.0..8.0) } else { 0.0 },
                on_grid: on_grid as u8,
                recording_index: recording,
                recording_session: session as i64,
            };
        };
        metas.push(meta);
    }
    let mut f = SubjectFile::from_samples(&metas, &extrinsics, &monitors, cfg.schema);
    if cfg.images {
        fill_images(&mut f, &mut rng);
    }
    f
}

fn fill_images(f: &mut SubjectFile, rng: &mut ChaCha8Rng) {
    for v in f.face_color.iter_mut().chain(f.left_eye_color.iter_mut()).chain(f.right_eye_color.iter_mut()) {
        *v = rng.random();
    }
    for i in 0..f.len() {
        let z = f.face_center[[i, 2]];
        for mut img in [
            f.face_depth.index_axis_mut(ndarray::Axis(0), i),
            f.left_eye_depth.index_axis_mut(ndarray::Axis(0), i),
            f.right_eye_depth.index_axis_mut(ndarray::Axis(0), i),
        ] {
            for v in img.iter_mut() {
                // about 5 % missing pixels
                *v = if rng.random::<f64>() < 0.05 { 0 } else { (z + rng.random_range(-40.0..40.0)) as u16 };
            }
        }
    }
}
