//! A small dense Levenberg-Marquardt solver over an arbitrary parameter
//! manifold.
//!
//! Problems provide residuals and a `retract` operation that applies a
//! tangent-space step to a state. Jacobians default to central differences
//! through `retract`, which keeps rotation parameterizations local and free
//! of singularities.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    type State: Clone;

    /// Dimension of the tangent space.
    fn num_params(&self) -> usize;

    /// Residual vector, or `None` when the state is outside the valid domain
    /// (e.g. a point projected from behind the camera).
    fn residuals(&self, state: &Self::State) -> Option<DVector<f64>>;

    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;

    /// Step used by the finite-difference Jacobian.
    fn jacobian_step(&self) -> f64 {
        1e-6
    }

    fn jacobian(&self, state: &Self::State, residual_len: usize) -> Option<DMatrix<f64>> {
        let n = self.num_params();
        let h = self.jacobian_step();
        let mut jac = DMatrix::zeros(residual_len, n);
        let mut delta = DVector::zeros(n);
        for k in 0..n {
            delta[k] = h;
            let plus = self.residuals(&self.retract(state, &delta))?;
            delta[k] = -h;
            let minus = self.residuals(&self.retract(state, &delta))?;
            delta[k] = 0.0;
            jac.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        Some(jac)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step has a norm below this.
    pub step_tolerance: f64,
    /// Stop once an accepted step changes the cost by less than this
    /// fraction.
    pub relative_cost_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            relative_cost_tolerance: 0.0,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StepTolerance,
    CostTolerance,
    /// Cost reached (numerical) zero.
    ZeroCost,
    /// No damping level produced a decrease; the state is a local minimum
    /// to working precision.
    Stalled,
    MaxIterations,
    /// The initial state was outside the residual domain.
    InvalidStart,
}

#[derive(Debug, Clone)]
pub struct LmReport<S> {
    pub state: S,
    /// Sum of squared residuals.
    pub cost: f64,
    pub residual_count: usize,
    pub iterations: usize,
    pub termination: Termination,
}

impl<S> LmReport<S> {
    pub fn converged(&self) -> bool {
        !matches!(
            self.termination,
            Termination::MaxIterations | Termination::InvalidStart
        )
    }

    /// Root mean square over residual components.
    pub fn rms(&self) -> f64 {
        if self.residual_count == 0 {
            0.0
        } else {
            (self.cost / self.residual_count as f64).sqrt()
        }
    }
}

pub fn levenberg_marquardt<P: LeastSquaresProblem>(
    problem: &P,
    initial: P::State,
    config: &LmConfig,
) -> LmReport<P::State> {
    let mut state = initial;
    let Some(mut residual) = problem.residuals(&state) else {
        return LmReport {
            state,
            cost: f64::INFINITY,
            residual_count: 0,
            iterations: 0,
            termination: Termination::InvalidStart,
        };
    };
    let m = residual.len();
    let mut cost = residual.norm_squared();
    let mut lambda = config.initial_lambda;
    let n = problem.num_params();

    for iteration in 0..config.max_iterations {
        if cost <= 1e-30 {
            return report(state, cost, m, iteration, Termination::ZeroCost);
        }
        let Some(jac) = problem.jacobian(&state, m) else {
            return report(state, cost, m, iteration, Termination::Stalled);
        };
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &residual;
        let diag: DVector<f64> = jtj.diagonal().map(|d| d.max(1e-12));

        let mut accepted = false;
        while lambda < 1e16 {
            let mut lhs = jtj.clone();
            for k in 0..n {
                lhs[(k, k)] += lambda * diag[k];
            }
            let step = match lhs.cholesky() {
                Some(ch) => -ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = problem.retract(&state, &step);
            match problem.residuals(&candidate) {
                Some(r) if r.norm_squared() < cost => {
                    let new_cost = r.norm_squared();
                    let rel = (cost - new_cost) / cost;
                    let step_norm = step.norm();
                    state = candidate;
                    residual = r;
                    cost = new_cost;
                    lambda = (lambda * 0.1).max(1e-15);
                    accepted = true;
                    if step_norm < config.step_tolerance {
                        return report(state, cost, m, iteration + 1, Termination::StepTolerance);
                    }
                    if rel < config.relative_cost_tolerance {
                        return report(state, cost, m, iteration + 1, Termination::CostTolerance);
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            return report(state, cost, m, iteration + 1, Termination::Stalled);
        }
    }
    report(state, cost, m, config.max_iterations, Termination::MaxIterations)
}

fn report<S>(state: S, cost: f64, m: usize, iterations: usize, termination: Termination) -> LmReport<S> {
    LmReport {
        state,
        cost,
        residual_count: m,
        iterations,
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        type State = DVector<f64>;
        fn num_params(&self) -> usize {
            2
        }
        fn residuals(&self, s: &DVector<f64>) -> Option<DVector<f64>> {
            Some(DVector::from_vec(vec![10.0 * (s[1] - s[0] * s[0]), 1.0 - s[0]]))
        }
        fn retract(&self, s: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
            s + d
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let rep = levenberg_marquardt(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &LmConfig::default());
        assert!(rep.converged(), "{:?}", rep.termination);
        assert!((rep.state[0] - 1.0).abs() < 1e-8);
        assert!((rep.state[1] - 1.0).abs() < 1e-8);
    }

    struct LineFit {
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl LeastSquaresProblem for LineFit {
        type State = DVector<f64>;
        fn num_params(&self) -> usize {
            2
        }
        fn residuals(&self, s: &DVector<f64>) -> Option<DVector<f64>> {
            Some(DVector::from_iterator(
                self.xs.len(),
                self.xs.iter().zip(&self.ys).map(|(x, y)| s[0] * x + s[1] - y),
            ))
        }
        fn retract(&self, s: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
            s + d
        }
    }

    #[test]
    fn nonzero_residual_problem_stops() {
        let p = LineFit {
            xs: vec![0.0, 1.0, 2.0, 3.0],
            ys: vec![0.1, 0.9, 2.2, 2.8],
        };
        let rep = levenberg_marquardt(&p, DVector::zeros(2), &LmConfig::default());
        assert!(rep.converged());
        // closed-form least squares: slope 0.94, intercept 0.09
        assert!((rep.state[0] - 0.94).abs() < 1e-8);
        assert!((rep.state[1] - 0.09).abs() < 1e-8);
        assert!(rep.rms() > 0.0);
    }
}
