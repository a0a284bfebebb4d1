//! Target posteriors.
//!
//! Every model factorizes as a prior times conditionally independent likelihood
//! terms, so the log joint is `log_prior(θ) + Σᵢ log_lik(θ, i)` and minibatch
//! estimates rescale a subset of the likelihood terms by `N / |S|`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

mod data;
mod linreg;
mod logistic;
mod schools;
mod synthetic;

pub use data::Dataset;
pub use linreg::{linreg_generate, linreg_posterior, LinRegSpec, LinearRegression};
pub use logistic::{logistic_generate, logistic_model, LogisticRegression};
pub use schools::{EightSchools, Parameterization};
pub use synthetic::{GaussianMixture1D, GaussianTarget};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// Dimension P of θ.
    fn dim(&self) -> usize;

    /// Number of likelihood terms N. Zero for prior-only targets.
    fn data_size(&self) -> usize;

    /// Returns `ln p₀(θ)` and adds its gradient into `grad`.
    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    /// Returns `ln p(yᵢ | θ)` and adds its gradient into `grad`.
    fn log_lik_grad(&self, theta: &[f64], i: usize, grad: &mut [f64]) -> f64;

    /// Exact posterior mean and covariance, when known in closed form.
    fn analytic_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.log_prior_grad(theta, &mut vec![0.0; self.dim()])
    }

    fn log_lik(&self, theta: &[f64], i: usize) -> f64 {
        self.log_lik_grad(theta, i, &mut vec![0.0; self.dim()])
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        self.log_joint_grad(theta, &mut vec![0.0; self.dim()])
    }

    /// Returns `ln p(y, θ)` and adds its gradient into `grad`.
    fn log_joint_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut total = self.log_prior_grad(theta, grad);
        for i in 0..self.data_size() {
            total += self.log_lik_grad(theta, i, grad);
        }
        total
    }
}

/// Checks a minibatch index set against a model's data size.
pub fn validate_minibatch(model: &dyn Model, indices: &[usize]) -> Result<()> {
    let n = model.data_size();
    if n == 0 {
        if indices.is_empty() {
            return Ok(());
        }
        return Err(Error::invalid("model has no observations but a minibatch was given"));
    }
    if indices.is_empty() {
        return Err(Error::invalid("minibatch index set is empty"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("minibatch index {bad} out of range for {n} observations")));
    }
    Ok(())
}

/// Likelihood over a minibatch rescaled by `N / |S|`, so that its expectation over
/// uniformly drawn index sets equals the full-data log likelihood.
/// Returns the scaled value and its gradient.
pub fn minibatch(model: &dyn Model, theta: &[f64], indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    Error::check_dim(model.dim(), theta.len())?;
    validate_minibatch(model, indices)?;
    let mut grad = vec![0.0; model.dim()];
    let value = minibatch_unchecked(model, theta, indices, &mut grad);
    Ok((value, grad))
}

/// Adds the scaled minibatch gradient into `grad` and returns the scaled value.
pub(crate) fn minibatch_unchecked(model: &dyn Model, theta: &[f64], indices: &[usize], grad: &mut [f64]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let scale = model.data_size() as f64 / indices.len() as f64;
    let mut local = vec![0.0; grad.len()];
    let mut value = 0.0;
    for &i in indices {
        value += model.log_lik_grad(theta, i, &mut local);
    }
    for (g, l) in grad.iter_mut().zip(&local) {
        *g += scale * l;
    }
    scale * value
}

#[inline]
pub(crate) fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * r * r
}

#[cfg(test)]
pub(crate) mod testing {
    use super::Model;

    /// Central finite-difference gradient of the log joint.
    pub fn fd_log_joint(model: &dyn Model, theta: &[f64], h: f64) -> Vec<f64> {
        let mut x = theta.to_vec();
        (0..theta.len())
            .map(|k| {
                x[k] = theta[k] + h;
                let up = model.log_joint(&x);
                x[k] = theta[k] - h;
                let down = model.log_joint(&x);
                x[k] = theta[k];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
    }

    pub fn assert_grad_matches_fd(model: &dyn Model, theta: &[f64]) {
        let mut g = vec![0.0; model.dim()];
        model.log_joint_grad(theta, &mut g);
        let fd = fd_log_joint(model, theta, 1e-5);
        let err = max_rel_err(&g, &fd);
        assert!(err < 1e-6, "{}: gradient mismatch {err:e}\n{g:?}\n{fd:?}", model.name());
    }
}
