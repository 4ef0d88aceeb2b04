//! Offline replay of stored samples: prediction, subject bias,
//! un-normalization to screen pixels and optional temporal filtering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::metrics::{angular_error, error_heatmap, quartiles, screen_error_mm, Heatmap, Quartiles};
use crate::dataset::{phase_of, SubjectFile};
use crate::filtering::{FilterError, FilterKind, KalmanConfig, PointFilter};
use crate::fusion::io::{Container, ParamIoError, KIND_MLP, KIND_TRANSFORMER};
use crate::fusion::{
    apply_subject_bias, project_to_token, FusionError, ParamSet, FusionParams, HyperParams, Mat, MlpParams, Mode, Regressor,
    SubjectBias, TokenProjection, TokenSet,
};
use crate::geometry::{gaze_point_from_prediction, GazeAngles, ScreenPlane};
use crate::image::Image;

/// Side of the gray eye thumbnail fed to the eye projections.
pub const EYE_GRID: usize = 14;
/// Block grid per eye depth map; two eyes give 50 depth features.
pub const DEPTH_GRID: usize = 5;
pub const EYE_FEATURES: usize = EYE_GRID * EYE_GRID;
pub const HEAD_FEATURES: usize = 13;
pub const DEPTH_FEATURES: usize = 2 * DEPTH_GRID * DEPTH_GRID;
/// Right eye, left eye, head pose, depth.
pub const FEATURE_TOKENS: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Params(#[from] ParamIoError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("model expects {0} tokens, the replay pipeline builds 5 (class + 4 features)")]
    TokenCount(usize),
    #[error("invalid stub configuration: {0}")]
    Stub(String),
}

/// Mean of each cell of a `grid`×`grid` partition of the image, over the
/// pixels `keep` accepts. Cells narrower than a pixel reuse the nearest one.
fn block_means<T: crate::image::Sample>(img: &Image<T>, grid: usize, keep: impl Fn(f64) -> bool) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let span = |i: usize, n: usize| {
        let a = (i * n / grid).min(n.saturating_sub(1));
        let b = ((i + 1) * n / grid).max(a + 1).min(n);
        a..b
    };
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in span(gy, h) {
                for x in span(gx, w) {
                    let v = (0..ch).map(|c| img.get(x, y, c).to_f64()).sum::<f64>() / ch as f64;
                    if keep(v) {
                        sum += v;
                        n += 1;
                    }
                }
            }
            out.push(if n > 0 { sum / n as f64 } else { 0.0 });
        }
    }
    out
}

/// 14×14 gray thumbnail scaled to [0, 1].
pub fn eye_features(img: &Image<u8>) -> Vec<f64> {
    block_means(img, EYE_GRID, |_| true).into_iter().map(|v| v / 255.0).collect()
}

/// Normalized head rotation followed by the landmarks divided by the patch size.
pub fn head_features(head_rot_norm: [f64; 3], landmarks: &[[f32; 2]; 5], face_size: usize) -> Vec<f64> {
    let mut v = head_rot_norm.to_vec();
    v.extend(landmarks.iter().flat_map(|p| p.map(|c| c as f64 / face_size as f64)));
    v
}

/// 5×5 block means of both eye depth maps in meters; missing pixels skipped.
pub fn depth_features(right: &Image<u16>, left: &Image<u16>) -> Vec<f64> {
    let mut v = block_means(right, DEPTH_GRID, |d| d > 0.0);
    v.extend(block_means(left, DEPTH_GRID, |d| d > 0.0));
    v.iter().map(|d| d / 1000.0).collect()
}

/// One projection per feature token.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProjections {
    pub right_eye: TokenProjection,
    pub left_eye: TokenProjection,
    pub head: TokenProjection,
    pub depth: TokenProjection,
}

const PROJ_NAMES: [&str; 4] = ["right_eye", "left_eye", "head", "depth"];

impl FeatureProjections {
    pub fn random(d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            right_eye: TokenProjection::random(EYE_FEATURES, d_model, rng),
            left_eye: TokenProjection::random(EYE_FEATURES, d_model, rng),
            head: TokenProjection::random(HEAD_FEATURES, d_model, rng),
            depth: TokenProjection::random(DEPTH_FEATURES, d_model, rng),
        }
    }

    fn all(&self) -> [&TokenProjection; 4] {
        [&self.right_eye, &self.left_eye, &self.head, &self.depth]
    }

    fn named(&self) -> Vec<(String, Mat)> {
        let mut v = Vec::new();
        for (name, p) in PROJ_NAMES.iter().zip(self.all()) {
            v.push((format!("proj.{name}.weight"), p.weight.clone()));
            v.push((format!("proj.{name}.bias"), Mat::from_row_slice(1, p.bias.len(), &p.bias)));
        }
        v
    }

    fn from_container(c: &Container, d_model: usize) -> Result<Self, ParamIoError> {
        let inputs = [EYE_FEATURES, EYE_FEATURES, HEAD_FEATURES, DEPTH_FEATURES];
        let mut out = Vec::with_capacity(4);
        for (name, n_in) in PROJ_NAMES.iter().zip(inputs) {
            let get = |part: &str, shape: (usize, usize)| {
                let key = format!("proj.{name}.{part}");
                let m = c.get(&key).ok_or_else(|| ParamIoError::Layout(format!("missing tensor {key}")))?;
                if m.shape() != shape {
                    return Err(ParamIoError::Layout(format!("{key} is {:?}, expected {shape:?}", m.shape())));
                }
                Ok(m.clone())
            };
            let weight = get("weight", (d_model, n_in))?;
            let bias = get("bias", (1, d_model))?.iter().copied().collect();
            out.push(TokenProjection { weight, bias });
        }
        let mut it = out.into_iter();
        let mut next = || it.next().expect("four projections");
        Ok(Self {
            right_eye: next(),
            left_eye: next(),
            head: next(),
            depth: next(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regressors {
    Transformer(FusionParams),
    Mlp(MlpParams),
}

/// Token projections plus a fusion model, as stored in one parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeModel {
    pub regressor: Regressors,
    pub projections: FeatureProjections,
}

impl GazeModel {
    fn check_hp(hp: &HyperParams) -> Result<(), PipelineError> {
        hp.validate()?;
        if hp.feature_tokens() != FEATURE_TOKENS {
            return Err(PipelineError::TokenCount(hp.n_tokens));
        }
        Ok(())
    }

    /// Randomly initialized model; `kind` is `"transformer"` or `"mlp"`.
    pub fn random(kind: &str, hp: &HyperParams, seed: u64) -> Result<Self, PipelineError> {
        Self::check_hp(hp)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regressor = match kind {
            KIND_TRANSFORMER => Regressors::Transformer(FusionParams::random(hp, &mut rng)?),
            KIND_MLP => Regressors::Mlp(MlpParams::random(hp, &mut rng)?),
            other => {
                return Err(ParamIoError::WrongKind {
                    expected: format!("{KIND_TRANSFORMER} or {KIND_MLP}"),
                    got: other.to_string(),
                }
                .into())
            }
        };
        Ok(Self {
            regressor,
            projections: FeatureProjections::random(hp.d_model, &mut rng),
        })
    }

    pub fn hyper(&self) -> &HyperParams {
        match &self.regressor {
            Regressors::Transformer(p) => p.hyper(),
            Regressors::Mlp(p) => p.hyper(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut named = Vec::new();
        let kind = match &self.regressor {
            Regressors::Transformer(p) => {
                p.visit(&mut |n, m| named.push((n.to_string(), m.clone())));
                KIND_TRANSFORMER
            }
            Regressors::Mlp(p) => {
                p.visit(&mut |n, m| named.push((n.to_string(), m.clone())));
                KIND_MLP
            }
        };
        named.extend(self.projections.named());
        Container::new(kind, *self.hyper(), named)
    }

    pub fn from_container(c: &Container) -> Result<Self, PipelineError> {
        let hp = c.manifest.hyperparams;
        Self::check_hp(&hp)?;
        let regressor = match c.manifest.kind.as_str() {
            KIND_MLP => Regressors::Mlp(c.to_mlp()?),
            _ => Regressors::Transformer(c.to_fusion()?),
        };
        Ok(Self {
            regressor,
            projections: FeatureProjections::from_container(c, hp.d_model)?,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        Self::from_container(&Container::load(path)?)
    }

    /// The four feature tokens of sample `i`.
    pub fn tokens(&self, f: &SubjectFile, i: usize) -> Result<TokenSet, FusionError> {
        let (re, le) = f.eye_color_images(i);
        let (rd, ld) = f.eye_depth_maps(i);
        let meta = f.meta(i);
        let p = &self.projections;
        let rows = vec![
            project_to_token(&eye_features(&re), &p.right_eye)?,
            project_to_token(&eye_features(&le), &p.left_eye)?,
            project_to_token(&head_features(meta.head_rot_norm, &meta.face_landmarks, f.schema().face_size), &p.head)?,
            project_to_token(&depth_features(&rd, &ld), &p.depth)?,
        ];
        TokenSet::from_rows(&rows)
    }

    pub fn predict(&self, tokens: &TokenSet) -> Result<GazeAngles, FusionError> {
        match &self.regressor {
            Regressors::Transformer(p) => p.predict(tokens, Mode::Inference),
            Regressors::Mlp(p) => p.predict(tokens, Mode::Inference),
        }
    }
}

/// Emits the stored label plus a fixed offset and seeded Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StubConfig {
    /// Noise standard deviation per angle, degrees.
    pub noise_deg: f64,
    pub offset_pitch_deg: f64,
    pub offset_yaw_deg: f64,
    pub seed: u64,
}

impl StubConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let vals = [self.noise_deg, self.offset_pitch_deg, self.offset_yaw_deg];
        if vals.iter().any(|v| !v.is_finite()) || self.noise_deg < 0.0 {
            return Err(PipelineError::Stub(format!("{self:?}")));
        }
        Ok(())
    }

    /// Prediction for sample `i`. Each sample draws from its own stream so
    /// the result does not depend on processing order.
    pub fn predict(&self, truth: GazeAngles, i: usize) -> GazeAngles {
        let mut g = GazeAngles::new(
            truth.pitch + self.offset_pitch_deg.to_radians(),
            truth.yaw + self.offset_yaw_deg.to_radians(),
        );
        if self.noise_deg > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(i as u64);
            let n = Normal::new(0.0, self.noise_deg.to_radians()).expect("validated");
            g.pitch += n.sample(&mut rng);
            g.yaw += n.sample(&mut rng);
        }
        g
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Stub(StubConfig),
    Model(Box<GazeModel>),
}

impl Predictor {
    fn predict(&self, f: &SubjectFile, i: usize) -> Result<GazeAngles, String> {
        match self {
            Predictor::Stub(s) => Ok(s.predict(f.gaze_angles(i), i)),
            Predictor::Model(m) => m
                .tokens(f, i)
                .and_then(|t| m.predict(&t))
                .map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub bias: SubjectBias,
    pub filter: FilterKind,
    pub kalman: KalmanConfig,
    /// Seconds between consecutive in-recording indices.
    pub frame_dt: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            bias: SubjectBias::default(),
            filter: FilterKind::None,
            kalman: KalmanConfig::default(),
            frame_dt: 1.0 / 30.0,
        }
    }
}

/// One replayed sample. Angles in radians, points in screen pixels.
/// Failed samples carry NaN values and an error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub sample: usize,
    pub session: i64,
    pub recording: i64,
    pub in_recording: i64,
    pub phase: u8,
    pub gt_pitch: f64,
    pub gt_yaw: f64,
    pub gt_x: f64,
    pub gt_y: f64,
    pub raw_pitch: f64,
    pub raw_yaw: f64,
    pub cal_pitch: f64,
    pub cal_yaw: f64,
    pub pred_x: f64,
    pub pred_y: f64,
    pub filt_x: f64,
    pub filt_y: f64,
    pub e_deg: f64,
    pub d_mm: f64,
    pub error: String,
}

impl ReplayRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

fn replay_one(f: &SubjectFile, i: usize, predictor: &Predictor, cfg: &ReplayConfig) -> ReplayRow {
    let gt = f.gaze_angles(i);
    let p = f.gaze_point_px(i);
    let session = f.recording_session[i];
    let recording = f.recording_index[i];
    let mut row = ReplayRow {
        sample: i,
        session,
        recording,
        in_recording: f.in_recording_index[i],
        phase: phase_of(recording).map_or(0, |ph| ph.number()),
        gt_pitch: gt.pitch,
        gt_yaw: gt.yaw,
        gt_x: p.x,
        gt_y: p.y,
        raw_pitch: f64::NAN,
        raw_yaw: f64::NAN,
        cal_pitch: f64::NAN,
        cal_yaw: f64::NAN,
        pred_x: f64::NAN,
        pred_y: f64::NAN,
        filt_x: f64::NAN,
        filt_y: f64::NAN,
        e_deg: f64::NAN,
        d_mm: f64::NAN,
        error: String::new(),
    };
    let raw = match predictor.predict(f, i) {
        Ok(g) => g,
        Err(e) => {
            row.error = e;
            return row;
        }
    };
    row.raw_pitch = raw.pitch;
    row.raw_yaw = raw.yaw;
    let cal = apply_subject_bias(raw, &cfg.bias);
    row.cal_pitch = cal.pitch;
    row.cal_yaw = cal.yaw;
    row.e_deg = angular_error(gt, cal);
    let plane = ScreenPlane::new(0.0, 0.0, 1.0, 0.0).expect("unit normal");
    let point = f.extrinsics_of(session).map_err(|e| e.to_string()).and_then(|e| {
        let m = f.monitor_of(session).map_err(|e| e.to_string())?;
        gaze_point_from_prediction(cal, &f.rotation_of(i), &f.face_center_of(i), &e, &m, &plane).map_err(|e| e.to_string())
    });
    match point {
        Ok(q) => {
            row.pred_x = q.x;
            row.pred_y = q.y;
        }
        Err(e) => row.error = e,
    }
    row
}

/// Replays every sample in file order. Predictions run in parallel; the
/// filters then run sequentially per `(session, recording)` stream.
pub fn replay(f: &SubjectFile, predictor: &Predictor, cfg: &ReplayConfig) -> Result<Vec<ReplayRow>, PipelineError> {
    if let Predictor::Stub(s) = predictor {
        s.validate()?;
    }
    // fail early on a bad filter configuration
    PointFilter::new(cfg.filter, cfg.kalman)?;
    let mut rows: Vec<ReplayRow> = (0..f.len())
        .into_par_iter()
        .map(|i| replay_one(f, i, predictor, cfg))
        .collect();
    let mut current: Option<((i64, i64), PointFilter)> = None;
    for row in rows.iter_mut() {
        if !row.is_ok() {
            continue;
        }
        let key = (row.session, row.recording);
        if current.as_ref().is_none_or(|(k, _)| *k != key) {
            current = Some((key, PointFilter::new(cfg.filter, cfg.kalman)?));
        }
        let (_, filter) = current.as_mut().expect("set above");
        let [x, y] = filter.step_at(row.in_recording as f64 * cfg.frame_dt, [row.pred_x, row.pred_y]);
        row.filt_x = x;
        row.filt_y = y;
        let m = f.monitor_of(row.session).expect("checked during prediction");
        row.d_mm = screen_error_mm(
            crate::geometry::ScreenPoint::new(row.gt_x, row.gt_y),
            crate::geometry::ScreenPoint::new(x, y),
            &m,
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub failed: usize,
    pub mean_e_deg: f64,
    pub mean_d_mm: f64,
    pub e_deg: Quartiles,
    pub d_mm: Quartiles,
    /// Mean angular error per phase 1, 2, 3; `None` when a phase is absent.
    pub phase_mean_e_deg: [Option<f64>; 3],
}

/// Aggregates the rows that succeeded; `None` when there are none.
pub fn evaluate(rows: &[ReplayRow]) -> Option<EvalSummary> {
    let ok: Vec<&ReplayRow> = rows.iter().filter(|r| r.is_ok() && r.e_deg.is_finite() && r.d_mm.is_finite()).collect();
    let e: Vec<f64> = ok.iter().map(|r| r.e_deg).collect();
    let d: Vec<f64> = ok.iter().map(|r| r.d_mm).collect();
    let pairs: Vec<_> = ok
        .iter()
        .map(|r| crate::dataset::metrics::ErrorPair { e_deg: r.e_deg, d_mm: r.d_mm })
        .collect();
    let (mean_e_deg, mean_d_mm) = crate::dataset::metrics::mean_errors(&pairs)?;
    let phase_mean_e_deg = std::array::from_fn(|k| {
        let v: Vec<f64> = ok.iter().filter(|r| r.phase as usize == k + 1).map(|r| r.e_deg).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    });
    Some(EvalSummary {
        samples: rows.len(),
        failed: rows.len() - ok.len(),
        mean_e_deg,
        mean_d_mm,
        e_deg: quartiles(&e)?,
        d_mm: quartiles(&d)?,
        phase_mean_e_deg,
    })
}

/// Mean on-screen error binned by the true gaze point.
pub fn distance_heatmap(rows: &[ReplayRow], bins: (usize, usize), extent: (f64, f64)) -> Heatmap {
    let ok: Vec<&ReplayRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let errors: Vec<f64> = ok.iter().map(|r| r.d_mm).collect();
    let points: Vec<[f64; 2]> = ok.iter().map(|r| [r.gt_x, r.gt_y]).collect();
    error_heatmap(&errors, &points, bins, extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synthetic_subject, SynthConfig};
    use crate::fusion::EncoderVariant;

    fn small() -> SubjectFile {
        synthetic_subject(&SynthConfig {
            samples: 40,
            ..Default::default()
        })
    }

    #[test]
    fn zero_noise_stub_is_exact() {
        let f = small();
        let rows = replay(&f, &Predictor::Stub(StubConfig::default()), &ReplayConfig::default()).unwrap();
        assert_eq!(rows.len(), f.len());
        for r in &rows {
            assert!(r.is_ok(), "{}", r.error);
            assert_eq!(r.e_deg, 0.0);
            assert!(r.d_mm < 1e-6, "{}", r.d_mm);
        }
    }

    #[test]
    fn stub_noise_is_order_free_and_seeded() {
        let s = StubConfig {
            noise_deg: 1.0,
            seed: 4,
            ..Default::default()
        };
        let g = GazeAngles::new(0.1, 0.2);
        assert_eq!(s.predict(g, 7), s.predict(g, 7));
        assert_ne!(s.predict(g, 7), s.predict(g, 8));
        assert!(StubConfig { noise_deg: -1.0, ..s }.validate().is_err());
    }

    #[test]
    fn model_round_trips_through_container() {
        let hp = HyperParams::toy(EncoderVariant::B2T);
        let m = GazeModel::random(KIND_TRANSFORMER, &hp, 3).unwrap();
        let mut buf = Vec::new();
        m.to_container().write_to(&mut buf).unwrap();
        let back = GazeModel::from_container(&Container::read_from(&mut buf.as_slice()).unwrap()).unwrap();
        let f = small();
        let a = m.predict(&m.tokens(&f, 0).unwrap()).unwrap();
        let b = back.predict(&back.tokens(&f, 0).unwrap()).unwrap();
        // parameters are stored as f32
        assert!((a.pitch - b.pitch).abs() < 1e-4 && (a.yaw - b.yaw).abs() < 1e-4);
        let bad = HyperParams { n_tokens: 3, ..hp };
        assert!(matches!(GazeModel::random(KIND_MLP, &bad, 0), Err(PipelineError::TokenCount(3))));
    }

    #[test]
    fn model_replay_covers_every_sample() {
        let hp = HyperParams::toy(EncoderVariant::PreLN);
        let m = GazeModel::random(KIND_MLP, &hp, 1).unwrap();
        let f = small();
        let cfg = ReplayConfig {
            filter: FilterKind::Kalman,
            ..Default::default()
        };
        let rows = replay(&f, &Predictor::Model(Box::new(m)), &cfg).unwrap();
        assert_eq!(rows.len(), f.len());
        assert!(rows.iter().all(|r| r.raw_pitch.is_finite()));
    }

    #[test]
    fn features_have_fixed_widths() {
        let f = small();
        let (re, _) = f.eye_color_images(0);
        let (rd, ld) = f.eye_depth_maps(0);
        assert_eq!(eye_features(&re).len(), EYE_FEATURES);
        assert_eq!(depth_features(&rd, &ld).len(), DEPTH_FEATURES);
        let m = f.meta(0);
        assert_eq!(head_features(m.head_rot_norm, &m.face_landmarks, 32).len(), HEAD_FEATURES);
        let blank = Image::<u16>::new(8, 8, 1);
        assert!(depth_features(&blank, &blank).iter().all(|&v| v == 0.0));
    }
}
