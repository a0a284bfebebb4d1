use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Model, LN_2PI};
use crate::error::{Error, Result};

/// Bernoulli-logit likelihood with a standard normal prior on the coefficients.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    data: Dataset,
}

pub fn logistic_model(data: Dataset) -> Result<LogisticRegression> {
    if let Some(bad) = data.response().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data(format!("logistic labels must be 0 or 1, found {bad}")));
    }
    if data.num_features() == 0 {
        return Err(Error::Data("logistic regression needs at least one feature".into()));
    }
    Ok(LogisticRegression { data })
}

/// Standard normal covariates, standard normal true coefficients, Bernoulli-logit labels.
pub fn logistic_generate(dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    if dim == 0 || n == 0 {
        return Err(Error::invalid("logistic generator needs dim >= 1 and n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let x = DMatrix::from_fn(n, dim, |_, _| rng.sample(StandardNormal));
    let y = DVector::from_fn(n, |i, _| {
        let eta: f64 = (0..dim).map(|k| x[(i, k)] * beta[k]).sum();
        if rng.random::<f64>() < sigmoid(eta) {
            1.0
        } else {
            0.0
        }
    });
    Dataset::new(x, y)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl LogisticRegression {
    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

impl Model for LogisticRegression {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.data.num_features()
    }

    fn data_size(&self) -> usize {
        self.data.len()
    }

    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut sq = 0.0;
        for (g, t) in grad.iter_mut().zip(theta) {
            *g -= t;
            sq += t * t;
        }
        -0.5 * theta.len() as f64 * LN_2PI - 0.5 * sq
    }

    fn log_lik_grad(&self, theta: &[f64], i: usize, grad: &mut [f64]) -> f64 {
        let row = self.data.row(i);
        let eta: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
        let y = self.data.response()[i];
        let w = y - sigmoid(eta);
        for (g, x) in grad.iter_mut().zip(row) {
            *g += w * x;
        }
        y * eta - softplus(eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::assert_grad_matches_fd;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn zero_weights_give_minus_ln2() {
        let data = logistic_generate(3, 20, 1).unwrap();
        let m = logistic_model(data).unwrap();
        for i in 0..20 {
            assert!((m.log_lik(&[0.0; 3], i) + 2f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_observation_score() {
        let m = logistic_model(Dataset::new(dmatrix![1.0], dvector![1.0]).unwrap()).unwrap();
        let mut g = [0.0];
        m.log_lik_grad(&[0.0], 0, &mut g);
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_binary_labels() {
        let data = Dataset::new(dmatrix![1.0; 2.0], dvector![1.0, 0.5]).unwrap();
        assert!(logistic_model(data).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = logistic_model(logistic_generate(4, 50, 5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            assert_grad_matches_fd(&m, &theta);
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let m = logistic_model(Dataset::new(dmatrix![1.0; 1.0], dvector![1.0, 0.0]).unwrap()).unwrap();
        assert!(m.log_lik(&[800.0], 0).is_finite());
        assert!(m.log_lik(&[800.0], 1).is_finite());
        assert!(m.log_lik(&[-800.0], 0).is_finite());
    }
}
