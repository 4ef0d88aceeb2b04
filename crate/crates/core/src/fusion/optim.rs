//! Adam and finite-difference gradient checking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mse_loss, DropoutMasks, FusionError, Regressor, TrainingSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let b1t = 1.0 - cfg.beta1.powi(state.t as i32);
    let b2t = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        params[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Central differences `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every `i`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>, FusionError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(FusionError::InvalidStep(eps));
    }
    Ok((0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut p = x.to_vec();
            p[i] = x[i] + eps;
            let fp = f(&p);
            p[i] = x[i] - eps;
            let fm = f(&p);
            (fp - fm) / (2.0 * eps)
        })
        .collect())
}

/// Relative error with a denominator floor.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub max_relative_error: f64,
    /// Name of the tensor holding the worst entry.
    pub worst_tensor: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

/// Compares `mse_loss_and_grad` against central differences of `mse_loss`.
pub fn grad_check<M: Regressor>(
    model: &M,
    batch: &[TrainingSample],
    masks: Option<&[DropoutMasks]>,
    eps: f64,
) -> Result<GradCheckReport, FusionError> {
    let (_, analytic) = super::mse_loss_and_grad(model, batch, masks, 1.0)?;
    let analytic = analytic.to_flat();
    let x0 = model.to_flat();
    let loss = |x: &[f64]| {
        let mut m = model.clone();
        m.set_flat(x);
        mse_loss(&m, batch, masks).unwrap_or(f64::NAN)
    };
    let numeric = finite_diff_grad(loss, &x0, eps)?;
    let mut owners = Vec::with_capacity(x0.len());
    model.visit(&mut |n, m| owners.extend(std::iter::repeat_n(n.to_string(), m.len())));
    let mut report = GradCheckReport {
        num_params: x0.len(),
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in 0..x0.len() {
        let e = relative_error(analytic[i], numeric[i], 1e-8);
        if e.is_nan() || e > report.max_relative_error {
            report.max_relative_error = if e.is_nan() { f64::INFINITY } else { e };
            report.worst_tensor = owners[i].clone();
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric[i];
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_gradient() {
        let eps = 1e-4;
        let g = finite_diff_grad(|w| w[0] * w[0], &[3.0], eps).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = eps * eps + 1e-9);
        assert_eq!(finite_diff_grad(|w| w[0], &[1.0], 0.0), Err(FusionError::InvalidStep(0.0)));
    }

    #[test]
    fn linear_layer_gradient_agrees() {
        // f(W) = sum((x·W)²) has gradient 2·xᵀ(x·W)
        let x = [0.5, -1.5, 2.0];
        let w = [0.1, 0.2, -0.3, 0.4, 0.7, -0.6];
        let f = |w: &[f64]| {
            (0..2)
                .map(|j| (0..3).map(|i| x[i] * w[i * 2 + j]).sum::<f64>().powi(2))
                .sum::<f64>()
        };
        let num = finite_diff_grad(f, &w, 1e-5).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let y: f64 = (0..3).map(|k| x[k] * w[k * 2 + j]).sum();
                assert_abs_diff_eq!(num[i * 2 + j], 2.0 * x[i] * y, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, -2.0, 0.0], &mut s, 0.01, &AdamConfig::default());
        assert_abs_diff_eq!(p[0], 0.99, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 1.01, epsilon = 1e-9);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![0.3, -0.2];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamConfig::default());
        }
        assert_eq!(p, vec![0.3, -0.2]);
    }
}
