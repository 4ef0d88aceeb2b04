//! Minibatch Adam training on in-memory token sets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, AdamConfig, AdamState};
use super::{mse_loss, mse_loss_and_grad, FusionError, HyperParams, Mat, Regressor, TokenSet, TrainingSample};
use crate::geometry::GazeAngles;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate is multiplied by this after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Apply the model's dropout rates during training.
    pub dropout: bool,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            lr_decay: 1.0,
            batch_size: 16,
            seed: 0,
            dropout: false,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<M> {
    pub params: M,
    /// Mean training MSE over each epoch's minibatches, before their updates.
    pub trace: Vec<f64>,
    /// Inference-mode MSE on the whole dataset after training.
    pub final_mse: f64,
}

pub fn fit_toy<M: Regressor>(initial: M, data: &[TrainingSample], cfg: &FitConfig) -> Result<FitResult<M>, FusionError> {
    if data.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let batch = cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial;
    let mut flat = params.to_flat();
    let mut state = AdamState::new(flat.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let samples: Vec<TrainingSample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let masks = cfg
                .dropout
                .then(|| samples.iter().map(|_| params.sample_masks(&mut rng)).collect::<Vec<_>>());
            let (loss, grad) = mse_loss_and_grad(&params, &samples, masks.as_deref(), 1.0)?;
            if !loss.is_finite() {
                return Err(FusionError::NonFinite("training loss".into()));
            }
            sum += loss * chunk.len() as f64;
            adam_step(&mut flat, &grad.to_flat(), &mut state, lr, &cfg.adam);
            params.set_flat(&flat);
        }
        trace.push(sum / data.len() as f64);
        lr *= cfg.lr_decay;
    }
    let final_mse = mse_loss(&params, data, None)?;
    Ok(FitResult { params, trace, final_mse })
}

/// Random tokens with targets from a fixed linear map of the flattened
/// tokens. `scale` bounds the map's coefficients times √inputs.
pub fn planted_linear_dataset(hp: &HyperParams, n: usize, scale: f64, seed: u64) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, d) = (hp.feature_tokens(), hp.d_model);
    let inputs = t * d;
    let a = scale / (inputs as f64).sqrt();
    let coeff = Mat::from_fn(2, inputs, |_, _| rng.random_range(-a..=a));
    let bias = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    (0..n)
        .map(|_| {
            let tokens = Mat::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0));
            let flat: Vec<f64> = tokens.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
            let y = |k: usize| coeff.row(k).iter().zip(&flat).map(|(c, x)| c * x).sum::<f64>() + bias[k];
            TrainingSample {
                tokens: TokenSet(tokens),
                target: GazeAngles::new(y(0), y(1)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{EncoderVariant, FusionParams};

    #[test]
    fn empty_dataset_rejected() {
        let hp = HyperParams::toy(EncoderVariant::B2T);
        let p = FusionParams::random(&hp, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(fit_toy(p, &[], &FitConfig::default()), Err(FusionError::EmptyDataset)));
    }

    #[test]
    fn single_sample_is_memorized() {
        let hp = HyperParams { n_tokens: 3, ..HyperParams::toy(EncoderVariant::B2T) };
        let data = planted_linear_dataset(&hp, 1, 0.5, 9);
        let p = FusionParams::random(&hp, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = FitConfig { epochs: 300, lr: 1e-2, lr_decay: 0.99, batch_size: 1, ..FitConfig::default() };
        let r = fit_toy(p, &data, &cfg).unwrap();
        assert!(r.final_mse < 1e-8, "{}", r.final_mse);
    }
}
