use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Model, LN_2PI};
use crate::error::{Error, Result};

/// Synthetic conjugate linear regression: `y | X ~ N(Xβ, σ²)`, `βₖ ~ N(0, 1)`,
/// with covariate rows drawn from `N(0, K)`, `K_ij = γ^|i−j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegSpec {
    pub dim: usize,
    pub n: usize,
    pub noise_var: f64,
    pub design_corr: f64,
    pub seed: u64,
}

impl LinRegSpec {
    pub fn new(dim: usize, design_corr: f64, seed: u64) -> Self {
        Self { dim, n: 300, noise_var: 0.4, design_corr, seed }
    }

    /// The design covariance `K_ij = γ^|i−j|`.
    pub fn design_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.design_corr.powi(i.abs_diff(j) as i32))
    }
}

#[derive(Debug, Clone)]
pub struct LinearRegression {
    data: Dataset,
    noise_var: f64,
    moments: (DVector<f64>, DMatrix<f64>),
}

impl LinearRegression {
    /// Gaussian likelihood with known noise variance and a standard normal prior on β.
    pub fn new(data: Dataset, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        let moments = linreg_posterior(noise_var, &data)?;
        Ok(Self { data, noise_var, moments })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

pub fn linreg_generate(spec: &LinRegSpec) -> Result<(LinearRegression, Dataset)> {
    if !(0.0..1.0).contains(&spec.design_corr) {
        return Err(Error::invalid(format!("design correlation {} outside [0, 1)", spec.design_corr)));
    }
    if spec.dim == 0 || spec.n == 0 {
        return Err(Error::invalid("linear regression needs P >= 1 and N >= 1"));
    }
    if !(spec.noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let p = spec.dim;
    let chol = spec
        .design_covariance()
        .cholesky()
        .ok_or_else(|| Error::invalid("design covariance is not positive definite"))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut x = DMatrix::zeros(spec.n, p);
    for r in 0..spec.n {
        let z = DVector::from_fn(p, |_, _| normal());
        let row = &chol * z;
        x.row_mut(r).copy_from(&row.transpose());
    }
    let beta = DVector::from_fn(p, |_, _| normal());
    let sd = spec.noise_var.sqrt();
    let mean = &x * &beta;
    let y = DVector::from_fn(spec.n, |i, _| mean[i] + sd * normal());

    let data = Dataset::new(x, y)?;
    let model = LinearRegression::new(data.clone(), spec.noise_var)?;
    Ok((model, data))
}

/// Exact posterior under the standard normal prior:
/// `Σ* = (XᵀX/σ² + I)⁻¹`, `μ* = Σ* Xᵀy / σ²`.
pub fn linreg_posterior(noise_var: f64, data: &Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let x = data.features();
    let p = x.ncols();
    let precision = x.transpose() * x / noise_var + DMatrix::identity(p, p);
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::invalid("posterior precision is not positive definite"))?;
    let cov = chol.inverse();
    let rhs = x.transpose() * data.response() / noise_var;
    let mean = chol.solve(&rhs);
    Ok((mean, cov))
}

impl Model for LinearRegression {
    fn name(&self) -> &str {
        "linreg"
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
        let fit: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
        let resid = self.data.response()[i] - fit;
        let w = resid / self.noise_var;
        for (g, x) in grad.iter_mut().zip(row) {
            *g += w * x;
        }
        -0.5 * (LN_2PI + self.noise_var.ln()) - 0.5 * resid * w
    }

    fn analytic_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        Some(self.moments.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::assert_grad_matches_fd;
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;

    #[test]
    fn design_covariance_rows() {
        let k = LinRegSpec::new(3, 0.9, 0).design_covariance();
        assert_eq!(k.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.9, 0.9f64.powi(2)]);
        let k0 = LinRegSpec::new(4, 0.0, 0).design_covariance();
        assert_eq!(k0, DMatrix::identity(4, 4));
    }

    #[test]
    fn generate_rejects_bad_corr() {
        assert!(linreg_generate(&LinRegSpec::new(2, 1.0, 0)).is_err());
        assert!(linreg_generate(&LinRegSpec::new(2, -0.1, 0)).is_err());
    }

    #[test]
    fn generated_design_is_roughly_white() {
        let spec = LinRegSpec { n: 1000, ..LinRegSpec::new(2, 0.0, 7) };
        let (_, data) = linreg_generate(&spec).unwrap();
        let x = data.features();
        let cov = x.transpose() * x / 1000.0;
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - target).abs() < 0.1, "{cov}");
            }
        }
    }

    #[test]
    fn posterior_examples() {
        let empty = Dataset::new(DMatrix::zeros(0, 3), DVector::zeros(0)).unwrap();
        let (m, s) = linreg_posterior(0.4, &empty).unwrap();
        assert_eq!(m, DVector::zeros(3));
        assert_eq!(s, DMatrix::identity(3, 3));

        let one = Dataset::new(dmatrix![1.0], dvector![1.0]).unwrap();
        let (m, s) = linreg_posterior(0.4, &one).unwrap();
        assert!((s[(0, 0)] - 2.0 / 7.0).abs() < 1e-14);
        assert!((m[0] - 5.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn log_joint_minus_posterior_density_is_constant() {
        let (model, _) = linreg_generate(&LinRegSpec::new(4, 0.5, 3)).unwrap();
        let (mean, cov) = model.analytic_moments().unwrap();
        let q = crate::families::VariationalParams::from_moments(&mean, &cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let diffs: Vec<f64> = (0..10)
            .map(|_| {
                let theta: Vec<f64> = (0..4).map(|k| mean[k] + rng.sample::<f64, _>(StandardNormal)).collect();
                model.log_joint(&theta) - q.log_density(&theta).unwrap()
            })
            .collect();
        let spread = diffs.iter().cloned().fold(f64::MIN, f64::max) - diffs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-8, "spread {spread:e}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, _) = linreg_generate(&LinRegSpec::new(5, 0.9, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert_grad_matches_fd(&model, &theta);
        }
    }
}
