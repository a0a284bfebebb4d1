//! Unbiased ELBO and ELBO-gradient estimators.
//!
//! The expected log joint is estimated with `M` reparameterized draws
//! `θₘ = μ + L zₘ` and a rescaled minibatch of likelihood terms; the Gaussian
//! entropy is added in closed form.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::families::VariationalParams;
use crate::models::{minibatch_unchecked, validate_minibatch, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    /// Gradient with respect to the flattened variational parameters; empty when
    /// only the value was requested.
    pub grad: Vec<f64>,
    pub num_draws: usize,
    pub minibatch: Vec<usize>,
}

impl ElboEstimate {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, draws: usize, dim: usize) -> Vec<f64> {
    (0..draws * dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_inputs(model: &dyn Model, params: &VariationalParams, draws: usize, minibatch: &[usize]) -> Result<()> {
    Error::check_dim(model.dim(), params.dim())?;
    if draws == 0 {
        return Err(Error::invalid("number of Monte Carlo draws must be at least 1"));
    }
    validate_minibatch(model, minibatch)
}

/// ELBO value only.
pub fn estimate_elbo<R: Rng + ?Sized>(
    model: &dyn Model,
    params: &VariationalParams,
    draws: usize,
    minibatch: &[usize],
    rng: &mut R,
) -> Result<ElboEstimate> {
    check_inputs(model, params, draws, minibatch)?;
    let noise = draw_noise(rng, draws, params.dim());
    estimate_from_noise(model, params, &noise, minibatch, false)
}

/// ELBO value and reparameterization gradient.
pub fn estimate_grad<R: Rng + ?Sized>(
    model: &dyn Model,
    params: &VariationalParams,
    draws: usize,
    minibatch: &[usize],
    rng: &mut R,
) -> Result<ElboEstimate> {
    check_inputs(model, params, draws, minibatch)?;
    let noise = draw_noise(rng, draws, params.dim());
    estimate_from_noise(model, params, &noise, minibatch, true)
}

/// Estimator under fixed standard-normal noise, laid out as `M` consecutive blocks of
/// length `P`. With the noise held fixed the value is a deterministic function of the
/// parameters and `grad` is its exact gradient.
pub fn estimate_from_noise(
    model: &dyn Model,
    params: &VariationalParams,
    noise: &[f64],
    minibatch: &[usize],
    with_grad: bool,
) -> Result<ElboEstimate> {
    let p = params.dim();
    if noise.is_empty() || noise.len() % p != 0 {
        return Err(Error::invalid(format!("noise length {} is not a positive multiple of {p}", noise.len())));
    }
    check_inputs(model, params, noise.len() / p, minibatch)?;
    let draws = noise.len() / p;
    let weight = 1.0 / draws as f64;

    let mut theta = vec![0.0; p];
    let mut grad_theta = vec![0.0; p];
    let mut grad = if with_grad { vec![0.0; params.num_params()] } else { Vec::new() };
    let mut value = 0.0;
    for z in noise.chunks_exact(p) {
        params.sample_into(z, &mut theta);
        grad_theta.iter_mut().for_each(|g| *g = 0.0);
        let lp = model.log_prior_grad(&theta, &mut grad_theta) + minibatch_unchecked(model, &theta, minibatch, &mut grad_theta);
        value += weight * lp;
        if with_grad {
            params.add_pullback(z, &grad_theta, weight, &mut grad);
        }
    }
    value += params.entropy();
    if with_grad {
        params.add_entropy_gradient(&mut grad);
    }
    Ok(ElboEstimate { value, grad, num_draws: draws, minibatch: minibatch.to_vec() })
}

/// Uniform minibatches without replacement within an epoch; the order is reshuffled
/// whenever fewer than a full batch of unused indices remain.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    size: usize,
    order: Vec<usize>,
    pos: usize,
}

impl MinibatchSampler {
    /// `size` of `None` (or at least `n`) yields the full data set every time.
    pub fn new(n: usize, size: Option<usize>) -> Result<Self> {
        let size = match size {
            Some(0) => return Err(Error::invalid("minibatch size must be at least 1")),
            Some(s) => s.min(n),
            None => n,
        };
        Ok(Self { size, order: (0..n).collect(), pos: n })
    }

    pub fn is_full_batch(&self) -> bool {
        self.size == self.order.len()
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        if self.is_full_batch() {
            return &self.order;
        }
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let batch = &self.order[self.pos..self.pos + self.size];
        self.pos += self.size;
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilyKind;
    use crate::models::{linreg_generate, GaussianTarget, LinRegSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_given_seed() {
        let (model, _) = linreg_generate(&LinRegSpec::new(3, 0.5, 1)).unwrap();
        let params = VariationalParams::standard(FamilyKind::FullRank, 3);
        let all: Vec<usize> = (0..300).collect();
        let a = estimate_grad(&model, &params, 5, &all, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = estimate_grad(&model, &params, 5, &all, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let c = estimate_elbo(&model, &params, 5, &all, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.value, c.value);
        assert!(c.grad.is_empty());
    }

    #[test]
    fn input_errors() {
        let model = GaussianTarget::standard(2);
        let params = VariationalParams::standard(FamilyKind::MeanField, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(estimate_grad(&model, &params, 0, &[], &mut rng).is_err());
        let wrong = VariationalParams::standard(FamilyKind::MeanField, 3);
        assert!(estimate_grad(&model, &wrong, 1, &[], &mut rng).is_err());
        assert!(estimate_from_noise(&model, &params, &[0.0; 3], &[], true).is_err());
    }

    #[test]
    fn fixed_noise_gradient_matches_finite_differences() {
        let (model, _) = linreg_generate(&LinRegSpec::new(3, 0.9, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = draw_noise(&mut rng, 4, 3);
        let batch: Vec<usize> = (0..300).step_by(7).collect();
        for kind in [FamilyKind::MeanField, FamilyKind::FullRank] {
            let k = kind.num_params(3);
            let flat: Vec<f64> = (0..k).map(|i| 0.1 * ((i * 37 % 11) as f64 - 5.0)).collect();
            let params = VariationalParams::from_flat(kind, 3, &flat).unwrap();
            let est = estimate_from_noise(&model, &params, &noise, &batch, true).unwrap();
            let h = 1e-5;
            for i in 0..k {
                let mut up = flat.clone();
                up[i] += h;
                let mut down = flat.clone();
                down[i] -= h;
                let f = |x: &[f64]| {
                    let p = VariationalParams::from_flat(kind, 3, x).unwrap();
                    estimate_from_noise(&model, &p, &noise, &batch, false).unwrap().value
                };
                let fd = (f(&up) - f(&down)) / (2.0 * h);
                let scale = est.grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
                assert!((fd - est.grad[i]).abs() / scale < 1e-8, "{kind:?} coord {i}: {fd} vs {}", est.grad[i]);
            }
        }
    }

    #[test]
    fn sampler_covers_epoch_without_replacement() {
        let mut s = MinibatchSampler::new(10, Some(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen: Vec<usize> = s.next_batch(&mut rng).to_vec();
        seen.extend_from_slice(s.next_batch(&mut rng));
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());

        let mut full = MinibatchSampler::new(4, None).unwrap();
        assert_eq!(full.next_batch(&mut rng), &[0, 1, 2, 3]);
        let mut empty = MinibatchSampler::new(0, Some(3)).unwrap();
        assert!(empty.next_batch(&mut rng).is_empty());
        assert!(MinibatchSampler::new(5, Some(0)).is_err());
    }
}
