use nalgebra::{DMatrix, DVector};

use super::{normal_logpdf, Model, LN_2PI};
use crate::error::{Error, Result};

/// Prior-only Gaussian target `N(mean, cov)` with no observations.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Error::check_dim(mean.len(), cov.nrows())?;
        Error::check_dim(mean.len(), cov.ncols())?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("target covariance is not positive definite"))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + log_det);
        Ok(Self { precision: chol.inverse(), mean, cov, log_norm })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).expect("identity is positive definite")
    }

    pub fn isotropic(mean: Vec<f64>, sd: f64) -> Result<Self> {
        let p = mean.len();
        Self::new(DVector::from_vec(mean), DMatrix::identity(p, p) * (sd * sd))
    }
}

impl Model for GaussianTarget {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn data_size(&self) -> usize {
        0
    }

    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.mean.len();
        let d: Vec<f64> = theta.iter().zip(self.mean.iter()).map(|(t, m)| t - m).collect();
        let mut quad = 0.0;
        for i in 0..p {
            let row: f64 = (0..p).map(|j| self.precision[(i, j)] * d[j]).sum();
            grad[i] -= row;
            quad += d[i] * row;
        }
        self.log_norm - 0.5 * quad
    }

    fn log_lik_grad(&self, _theta: &[f64], _i: usize, _grad: &mut [f64]) -> f64 {
        0.0
    }

    fn analytic_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        Some((self.mean.clone(), self.cov.clone()))
    }
}

/// One-dimensional Gaussian mixture target with no observations.
#[derive(Debug, Clone)]
pub struct GaussianMixture1D {
    components: Vec<(f64, f64, f64)>,
}

impl GaussianMixture1D {
    /// Components as `(weight, mean, sd)`; weights are normalized.
    pub fn new(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if components.iter().any(|&(w, _, s)| !(w > 0.0) || !(s > 0.0)) {
            return Err(Error::invalid("mixture weights and standard deviations must be positive"));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        Ok(Self { components: components.into_iter().map(|(w, m, s)| (w / total, m, s)).collect() })
    }

    /// Equal mixture of `N(-3, 0.5²)` and `N(3, 0.5²)`.
    pub fn bimodal() -> Self {
        Self::new(vec![(0.5, -3.0, 0.5), (0.5, 3.0, 0.5)]).expect("valid mixture")
    }
}

impl Model for GaussianMixture1D {
    fn name(&self) -> &str {
        "mixture"
    }

    fn dim(&self) -> usize {
        1
    }

    fn data_size(&self) -> usize {
        0
    }

    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let x = theta[0];
        let logs: Vec<f64> = self.components.iter().map(|&(w, m, s)| w.ln() + normal_logpdf(x, m, s)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let mut dlog = 0.0;
        for (&(_, m, s), l) in self.components.iter().zip(&logs) {
            dlog += (l - max).exp() / total * (m - x) / (s * s);
        }
        grad[0] += dlog;
        max + total.ln()
    }

    fn log_lik_grad(&self, _theta: &[f64], _i: usize, _grad: &mut [f64]) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::assert_grad_matches_fd;
    use nalgebra::dmatrix;

    #[test]
    fn gaussian_target_density_and_gradient() {
        let t = GaussianTarget::new(DVector::from_vec(vec![1.0, -1.0]), dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let q = crate::families::VariationalParams::from_moments(&DVector::from_vec(vec![1.0, -1.0]), &dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        for theta in [[0.0, 0.0], [1.0, -1.0], [3.0, 2.5]] {
            assert!((t.log_joint(&theta) - q.log_density(&theta).unwrap()).abs() < 1e-12);
            assert_grad_matches_fd(&t, &theta);
        }
    }

    #[test]
    fn mixture_is_symmetric_and_normalized_gradient() {
        let m = GaussianMixture1D::bimodal();
        assert!((m.log_joint(&[2.0]) - m.log_joint(&[-2.0])).abs() < 1e-14);
        for x in [-4.0, -3.0, -0.3, 0.0, 1.7, 3.2, 10.0] {
            assert_grad_matches_fd(&m, &[x]);
        }
        // Integrates to one.
        let h = 1e-3;
        let mass: f64 = (-10_000..10_000).map(|i| m.log_joint(&[i as f64 * h]).exp() * h).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }
}
