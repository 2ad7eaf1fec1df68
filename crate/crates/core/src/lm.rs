//! Levenberg-Marquardt over per-sample 2-vector residuals.

use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};

use crate::error::{Error, Result};
use crate::sampler::Correspondence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Relative cost decrease below which the solve is converged.
    pub cost_tol: f64,
    /// Step norm, relative to the parameter norm, below which the solve is
    /// converged.
    pub step_tol: f64,
    /// Gradient infinity norm, relative to `1 + cost`, below which the solve
    /// is converged.
    pub grad_tol: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            cost_tol: 1e-12,
            step_tol: 1e-12,
            grad_tol: 1e-10,
            lambda0: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            lambda_max: 1e10,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.cost_tol,
            self.step_tol,
            self.grad_tol,
            self.lambda0,
            self.lambda_max,
        ];
        if self.max_iters == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Validation("solver options must be positive".into()));
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return Err(Error::Validation("lambda_up > 1 > lambda_down > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    Converged,
    MaxIters,
    Stalled,
}

impl LmStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            LmStatus::Converged => "converged",
            LmStatus::MaxIters => "max_iters",
            LmStatus::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub initial_cost: f64,
    /// Sum of squared residuals over the samples valid at `params`.
    pub final_cost: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

/// Residuals and Jacobians of one output family.
pub trait ResidualProvider {
    fn dim(&self) -> usize;
    fn residual(&self, params: &[f64], sample: &Correspondence) -> Vector2<f64>;
    fn jacobian(&self, params: &[f64], sample: &Correspondence) -> Matrix2xX<f64>;
    /// Whether `sample` lies in the family's projection domain at `params`.
    fn valid(&self, params: &[f64], sample: &Correspondence) -> bool;
    /// Projects `params` onto the family's box constraints.
    fn clamp(&self, _params: &mut [f64]) {}
}

fn cost_over<P: ResidualProvider + ?Sized>(
    provider: &P,
    params: &[f64],
    samples: &[Correspondence],
    mask: &[bool],
) -> f64 {
    samples
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| provider.residual(params, s).norm_squared())
        .sum()
}

fn valid_mask<P: ResidualProvider + ?Sized>(
    provider: &P,
    params: &[f64],
    samples: &[Correspondence],
) -> Vec<bool> {
    samples.iter().map(|s| provider.valid(params, s)).collect()
}

/// Sum of squared residuals over the samples valid at `params`.
pub fn total_cost<P: ResidualProvider + ?Sized>(
    provider: &P,
    params: &[f64],
    samples: &[Correspondence],
) -> f64 {
    let mask = valid_mask(provider, params, samples);
    cost_over(provider, params, samples, &mask)
}

/// Gauss-Newton gradient `Jᵀe` over the samples valid at `params`.
pub fn gradient<P: ResidualProvider + ?Sized>(
    provider: &P,
    params: &[f64],
    samples: &[Correspondence],
) -> DVector<f64> {
    let mut g = DVector::zeros(provider.dim());
    for s in samples.iter().filter(|s| provider.valid(params, s)) {
        g += provider.jacobian(params, s).transpose() * provider.residual(params, s);
    }
    g
}

/// Minimizes the summed squared residuals starting from `x0`.
///
/// Samples invalid at the current iterate are left out of that iteration's
/// normal equations. A step is accepted only if every sample in the current
/// system stays valid and the cost over that system decreases.
pub fn minimize<P: ResidualProvider + ?Sized>(
    provider: &P,
    samples: &[Correspondence],
    x0: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome> {
    opts.validate()?;
    let n = provider.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "provider has {n} parameters, start vector has {}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    let mut x = x0.to_vec();
    provider.clamp(&mut x);
    let mut mask = valid_mask(provider, &x, samples);
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllSamplesInvalid);
    }
    let mut cost = cost_over(provider, &x, samples, &mask);
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("non-finite initial cost".into()));
    }
    let initial_cost = cost;
    let mut lambda = opts.lambda0;
    let mut iterations = 0;

    let status = 'outer: loop {
        if iterations >= opts.max_iters {
            break LmStatus::MaxIters;
        }
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for (s, _) in samples.iter().zip(&mask).filter(|(_, &m)| m) {
            let j = provider.jacobian(&x, s);
            let e = provider.residual(&x, s);
            h += j.transpose() * &j;
            g += j.transpose() * e;
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite gradient".into()));
        }
        if g.amax() <= opts.grad_tol * (1.0 + cost) {
            break LmStatus::Converged;
        }
        let diag_floor = h.diagonal().max() * 1e-12;

        loop {
            let mut damped = h.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * h[(i, i)].max(diag_floor);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= opts.lambda_up;
                if lambda > opts.lambda_max {
                    break 'outer LmStatus::Stalled;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if delta.norm() < opts.step_tol * (x_norm + opts.step_tol) {
                break 'outer LmStatus::Converged;
            }
            let mut candidate: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            provider.clamp(&mut candidate);
            let keeps_valid = samples
                .iter()
                .zip(&mask)
                .all(|(s, &m)| !m || provider.valid(&candidate, s));
            let candidate_cost = if keeps_valid {
                cost_over(provider, &candidate, samples, &mask)
            } else {
                f64::INFINITY
            };
            if candidate_cost.is_finite() && candidate_cost < cost {
                let decrease = (cost - candidate_cost) / cost.max(f64::MIN_POSITIVE);
                x = candidate;
                iterations += 1;
                lambda = (lambda * opts.lambda_down).max(f64::MIN_POSITIVE);
                mask = valid_mask(provider, &x, samples);
                cost = cost_over(provider, &x, samples, &mask);
                if decrease < opts.cost_tol {
                    break 'outer LmStatus::Converged;
                }
                continue 'outer;
            }
            lambda *= opts.lambda_up;
            if lambda > opts.lambda_max {
                break 'outer LmStatus::Stalled;
            }
        }
    };

    Ok(LmOutcome {
        params: x,
        initial_cost,
        final_cost: cost,
        iterations,
        status,
    })
}
