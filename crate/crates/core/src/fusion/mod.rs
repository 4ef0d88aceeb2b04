//! Feature fusion: a small transformer encoder that fuses per-modality
//! tokens into gaze angles, an MLP alternative, and the training plumbing
//! (manual gradients, Adam, finite-difference checks, parameter files).

pub mod io;
pub mod mlp;
pub mod ops;
pub mod optim;
pub mod train;
pub mod transformer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GazeAngles;
pub use ops::Mat;

pub use mlp::MlpParams;
pub use transformer::{encoder_block_forward, fusion_forward, mhsa_forward, FusionParams, LayerParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} feature tokens, got {got}")]
    TokenCountMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// `x' = MHSA(LN(x)) + x`, `y = MLP(LN(x')) + x'`
    PreLN,
    /// `x' = LN(MHSA(x) + x)`, `y = LN(MLP(x') + x')`
    PostLN,
    /// Post-LN with the block input added before the last norm:
    /// `y = LN(MLP(x') + x' + x)`
    B2T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positional {
    Learned,
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Token count including the class token.
    pub n_tokens: usize,
    pub dropout_attn: f64,
    pub dropout_ff: f64,
    pub variant: EncoderVariant,
    pub positional: Positional,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d_model: 1024,
            d_ff: 2048,
            n_heads: 8,
            n_layers: 6,
            n_tokens: 5,
            dropout_attn: 0.1,
            dropout_ff: 0.1,
            variant: EncoderVariant::B2T,
            positional: Positional::Learned,
        }
    }
}

impl HyperParams {
    /// Small dimensions for tests and toy training.
    pub fn toy(variant: EncoderVariant) -> Self {
        Self {
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            n_layers: 2,
            n_tokens: 5,
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidHyperParams(m));
        if self.d_model == 0 || self.d_ff == 0 || self.n_heads == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_h {}", self.d_model, self.n_heads));
        }
        if self.n_tokens < 2 {
            return bad("need the class token plus at least one feature token".into());
        }
        for p in [self.dropout_attn, self.dropout_ff] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn feature_tokens(&self) -> usize {
        self.n_tokens - 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Feature tokens, one per row (right eye, left eye, head pose, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet(pub Mat);

impl TokenSet {
    pub fn new(m: Mat) -> Result<Self, FusionError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite("token".into()));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FusionError> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(FusionError::ShapeMismatch("ragged token rows".into()));
        }
        Self::new(Mat::from_row_iterator(rows.len(), d, rows.iter().flatten().copied()))
    }

    pub fn count(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self(Mat::from_fn(self.0.nrows(), self.0.ncols(), |r, c| self.0[(order[r], c)]))
    }
}

/// Dense layer with ReLU mapping a feature vector to one token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenProjection {
    /// `d_model × n_in`
    pub weight: Mat,
    /// length `d_model`
    pub bias: Vec<f64>,
}

impl TokenProjection {
    pub fn random(n_in: usize, d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (n_in.max(1) as f64).sqrt();
        Self {
            weight: Mat::from_fn(d_model, n_in, |_, _| rng.random_range(-a..=a)),
            bias: (0..d_model).map(|_| rng.random_range(-a..=a)).collect(),
        }
    }
}

/// `max(0, W·x + b)`.
pub fn project_to_token(features: &[f64], proj: &TokenProjection) -> Result<Vec<f64>, FusionError> {
    let w = &proj.weight;
    if w.ncols() != features.len() || w.nrows() != proj.bias.len() {
        return Err(FusionError::ShapeMismatch(format!(
            "weight {}x{}, input {}, bias {}",
            w.nrows(),
            w.ncols(),
            features.len(),
            proj.bias.len()
        )));
    }
    Ok((0..w.nrows())
        .map(|r| {
            let s: f64 = w.row(r).iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + proj.bias[r];
            s.max(0.0)
        })
        .collect())
}

/// Per-subject correction, scale stored centered at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectBias {
    pub offset_pitch: f64,
    pub offset_yaw: f64,
    pub scale_pitch: f64,
    pub scale_yaw: f64,
}

impl SubjectBias {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// `ĝ = î·(1 + scale) + offset`, per axis.
pub fn apply_subject_bias(i: GazeAngles, b: &SubjectBias) -> GazeAngles {
    GazeAngles::new(
        i.pitch * (1.0 + b.scale_pitch) + b.offset_pitch,
        i.yaw * (1.0 + b.scale_yaw) + b.offset_yaw,
    )
}

/// Flat, ordered access to every learnable tensor.
pub trait ParamSet: Clone + Send + Sync {
    fn visit(&self, f: &mut dyn FnMut(&str, &Mat));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.len());
        n
    }

    /// Column-major within each tensor, tensors in visit order.
    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, m| v.extend_from_slice(m.as_slice()));
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut off = 0;
        self.visit_mut(&mut |_, m| {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, m| m.fill(0.0));
        z
    }

    fn names(&self) -> Vec<(String, (usize, usize))> {
        let mut v = Vec::new();
        self.visit(&mut |n, m| v.push((n.to_string(), (m.nrows(), m.ncols()))));
        v
    }
}

/// Dropout multipliers (0 or `1/(1−p)`) in the order a model consumes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Mat>);

pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Mat {
    if p <= 0.0 {
        return Mat::from_element(rows, cols, 1.0);
    }
    let keep = 1.0 / (1.0 - p);
    Mat::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
}

pub enum Mode<'a> {
    Inference,
    /// Dropout masks drawn from the generator.
    Train(&'a mut ChaCha8Rng),
}

/// A model mapping a token set to two angles, with exact gradients.
pub trait Regressor: ParamSet {
    type Cache: Send;

    fn hyper(&self) -> &HyperParams;

    /// `masks = None` disables dropout.
    fn forward_cached(&self, tokens: &TokenSet, masks: Option<&DropoutMasks>) -> Result<([f64; 2], Self::Cache), FusionError>;

    /// Gradient of `d_out · output` with respect to every parameter.
    fn backward(&self, cache: &Self::Cache, d_out: [f64; 2]) -> Self;

    fn sample_masks(&self, rng: &mut ChaCha8Rng) -> DropoutMasks;

    fn predict(&self, tokens: &TokenSet, mode: Mode<'_>) -> Result<GazeAngles, FusionError> {
        let masks = match mode {
            Mode::Inference => None,
            Mode::Train(rng) => Some(self.sample_masks(rng)),
        };
        let (o, _) = self.forward_cached(tokens, masks.as_ref())?;
        Ok(GazeAngles::new(o[0], o[1]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub tokens: TokenSet,
    pub target: GazeAngles,
}

/// Mean over samples of the squared 2-norm of the angle error.
pub fn mse_loss<M: Regressor>(model: &M, batch: &[TrainingSample], masks: Option<&[DropoutMasks]>) -> Result<f64, FusionError> {
    if batch.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let losses: Result<Vec<f64>, FusionError> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (o, _) = model.forward_cached(&s.tokens, masks.map(|m| &m[i]))?;
            Ok((o[0] - s.target.pitch).powi(2) + (o[1] - s.target.yaw).powi(2))
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / batch.len() as f64)
}

/// MSE and its gradient, scaled by `loss_scale`.
pub fn mse_loss_and_grad<M: Regressor>(
    model: &M,
    batch: &[TrainingSample],
    masks: Option<&[DropoutMasks]>,
    loss_scale: f64,
) -> Result<(f64, M), FusionError> {
    if batch.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let n = batch.len() as f64;
    let parts: Result<Vec<(f64, Vec<f64>)>, FusionError> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (o, cache) = model.forward_cached(&s.tokens, masks.map(|m| &m[i]))?;
            let e = [o[0] - s.target.pitch, o[1] - s.target.yaw];
            let k = 2.0 * loss_scale / n;
            let g = model.backward(&cache, [k * e[0], k * e[1]]);
            Ok((e[0] * e[0] + e[1] * e[1], g.to_flat()))
        })
        .collect();
    let parts = parts?;
    // fixed summation order keeps results reproducible across thread counts
    let mut total = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    let mut grad = model.zeros_like();
    grad.set_flat(&total);
    Ok((loss_scale * loss / n, grad))
}
