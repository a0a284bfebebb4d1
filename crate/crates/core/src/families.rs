//! Gaussian variational families in an unconstrained parameterization.
//!
//! A [`VariationalParams`] holds a location vector `mu` and a Cholesky factor `L`
//! of the covariance. Diagonal entries of `L` are stored as logarithms so that
//! any real vector is a valid parameter. The flattened layout is
//! `[location; scale]`, where `scale` is the row-major lower triangle of `L`
//! (full-rank) or the log standard deviations (mean-field).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    MeanField,
    FullRank,
}

impl FamilyKind {
    /// Length of the unconstrained scale block for a `dim`-dimensional target.
    pub fn scale_len(self, dim: usize) -> usize {
        match self {
            FamilyKind::MeanField => dim,
            FamilyKind::FullRank => dim * (dim + 1) / 2,
        }
    }

    /// Total flattened parameter count K.
    pub fn num_params(self, dim: usize) -> usize {
        dim + self.scale_len(dim)
    }

    /// Recovers the target dimension P from a flattened length K, if one exists.
    pub fn dim_from_num_params(self, k: usize) -> Option<usize> {
        match self {
            FamilyKind::MeanField => (k % 2 == 0).then_some(k / 2),
            FamilyKind::FullRank => {
                let mut p = 0;
                while p + p * (p + 1) / 2 < k {
                    p += 1;
                }
                (p + p * (p + 1) / 2 == k).then_some(p)
            }
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::MeanField => "mean_field",
            FamilyKind::FullRank => "full_rank",
        })
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_field" | "meanfield" | "mf" => Ok(FamilyKind::MeanField),
            "full_rank" | "fullrank" | "fr" => Ok(FamilyKind::FullRank),
            other => Err(Error::invalid(format!("unknown family '{other}'"))),
        }
    }
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    kind: FamilyKind,
    location: Vec<f64>,
    scale: Vec<f64>,
}

impl VariationalParams {
    pub fn new(kind: FamilyKind, location: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if location.is_empty() {
            return Err(Error::invalid("variational dimension must be at least 1"));
        }
        Error::check_dim(kind.scale_len(location.len()), scale.len())?;
        if location.iter().chain(&scale).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("variational parameters".into()));
        }
        Ok(Self { kind, location, scale })
    }

    /// Zero location, identity scale.
    pub fn standard(kind: FamilyKind, dim: usize) -> Self {
        Self {
            kind,
            location: vec![0.0; dim],
            scale: vec![0.0; kind.scale_len(dim)],
        }
    }

    /// Mean-field parameters from a mean and positive standard deviations.
    pub fn mean_field(location: Vec<f64>, sd: &[f64]) -> Result<Self> {
        if sd.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        Self::new(FamilyKind::MeanField, location, sd.iter().map(|s| s.ln()).collect())
    }

    /// Full-rank parameters from a mean and a lower-triangular factor with positive diagonal.
    /// Entries above the diagonal are ignored.
    pub fn full_rank(location: Vec<f64>, chol: &DMatrix<f64>) -> Result<Self> {
        let p = location.len();
        if chol.nrows() != p || chol.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, got: chol.nrows() });
        }
        let mut scale = Vec::with_capacity(p * (p + 1) / 2);
        for i in 0..p {
            for j in 0..i {
                scale.push(chol[(i, j)]);
            }
            if chol[(i, i)] <= 0.0 {
                return Err(Error::invalid("Cholesky diagonal must be positive"));
            }
            scale.push(chol[(i, i)].ln());
        }
        Self::new(FamilyKind::FullRank, location, scale)
    }

    /// Full-rank parameters matching a Gaussian with the given mean and covariance.
    pub fn from_moments(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
        Self::full_rank(mean.iter().copied().collect(), &chol.l())
    }

    pub fn from_flat(kind: FamilyKind, dim: usize, flat: &[f64]) -> Result<Self> {
        Error::check_dim(kind.num_params(dim), flat.len())?;
        Self::new(kind, flat[..dim].to_vec(), flat[dim..].to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.location);
        out.extend_from_slice(&self.scale);
        out
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn num_params(&self) -> usize {
        self.kind.num_params(self.dim())
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn scale_unconstrained(&self) -> &[f64] {
        &self.scale
    }

    fn log_diag(&self, i: usize) -> f64 {
        match self.kind {
            FamilyKind::MeanField => self.scale[i],
            FamilyKind::FullRank => self.scale[tri(i, i)],
        }
    }

    /// Σᵢ ln Lᵢᵢ.
    pub fn log_det_scale(&self) -> f64 {
        (0..self.dim()).map(|i| self.log_diag(i)).sum()
    }

    /// The Cholesky factor `L` as a dense lower-triangular matrix.
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut l = DMatrix::zeros(p, p);
        match self.kind {
            FamilyKind::MeanField => {
                for i in 0..p {
                    l[(i, i)] = self.scale[i].exp();
                }
            }
            FamilyKind::FullRank => {
                for i in 0..p {
                    for j in 0..i {
                        l[(i, j)] = self.scale[tri(i, j)];
                    }
                    l[(i, i)] = self.scale[tri(i, i)].exp();
                }
            }
        }
        l
    }

    /// Covariance `L Lᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.scale_matrix();
        &l * l.transpose()
    }

    fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.log_diag(i).exp()).collect()
    }

    /// `mu + L * noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), noise.len())?;
        let mut out = vec![0.0; self.dim()];
        self.sample_into(noise, &mut out);
        Ok(out)
    }

    pub(crate) fn sample_into(&self, noise: &[f64], out: &mut [f64]) {
        let p = self.dim();
        match self.kind {
            FamilyKind::MeanField => {
                for i in 0..p {
                    out[i] = self.location[i] + self.scale[i].exp() * noise[i];
                }
            }
            FamilyKind::FullRank => {
                for i in 0..p {
                    let row = &self.scale[tri(i, 0)..tri(i, i)];
                    let off: f64 = row.iter().zip(noise).map(|(l, z)| l * z).sum();
                    out[i] = self.location[i] + off + self.scale[tri(i, i)].exp() * noise[i];
                }
            }
        }
    }

    /// Solves `L z = r` by forward substitution.
    fn solve_lower(&self, r: &[f64], diag: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let mut z = vec![0.0; p];
        match self.kind {
            FamilyKind::MeanField => {
                for i in 0..p {
                    z[i] = r[i] / diag[i];
                }
            }
            FamilyKind::FullRank => {
                for i in 0..p {
                    let row = &self.scale[tri(i, 0)..tri(i, i)];
                    let acc: f64 = row.iter().zip(&z).map(|(l, zj)| l * zj).sum();
                    z[i] = (r[i] - acc) / diag[i];
                }
            }
        }
        z
    }

    /// Solves `Lᵀ u = z` by back substitution.
    fn solve_upper_transpose(&self, z: &[f64], diag: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let mut u = vec![0.0; p];
        match self.kind {
            FamilyKind::MeanField => {
                for i in 0..p {
                    u[i] = z[i] / diag[i];
                }
            }
            FamilyKind::FullRank => {
                for i in (0..p).rev() {
                    let acc: f64 = (i + 1..p).map(|k| self.scale[tri(k, i)] * u[k]).sum();
                    u[i] = (z[i] - acc) / diag[i];
                }
            }
        }
        u
    }

    fn standardize(&self, point: &[f64], diag: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = point.iter().zip(&self.location).map(|(x, m)| x - m).collect();
        self.solve_lower(&r, diag)
    }

    pub fn log_density(&self, point: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim(), point.len())?;
        let diag = self.diag();
        let z = self.standardize(point, &diag);
        let sq: f64 = z.iter().map(|v| v * v).sum();
        Ok(-0.5 * self.dim() as f64 * LN_2PI - self.log_det_scale() - 0.5 * sq)
    }

    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + (2.0 * PI).ln()) + self.log_det_scale()
    }

    /// Gradient of the entropy with respect to the flattened parameters:
    /// one on each log-diagonal coordinate, zero elsewhere.
    pub fn entropy_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params()];
        self.add_entropy_gradient(&mut g);
        g
    }

    pub(crate) fn add_entropy_gradient(&self, grad: &mut [f64]) {
        let p = self.dim();
        for i in 0..p {
            let idx = match self.kind {
                FamilyKind::MeanField => p + i,
                FamilyKind::FullRank => p + tri(i, i),
            };
            grad[idx] += 1.0;
        }
    }

    /// Gradient of `ln q(point)` with respect to the flattened parameters, `point` held fixed.
    pub fn log_density_gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), point.len())?;
        let p = self.dim();
        let diag = self.diag();
        let z = self.standardize(point, &diag);
        let u = self.solve_upper_transpose(&z, &diag);
        let mut g = vec![0.0; self.num_params()];
        g[..p].copy_from_slice(&u);
        match self.kind {
            FamilyKind::MeanField => {
                for i in 0..p {
                    g[p + i] = u[i] * z[i] * diag[i] - 1.0;
                }
            }
            FamilyKind::FullRank => {
                for i in 0..p {
                    for j in 0..i {
                        g[p + tri(i, j)] = u[i] * z[j];
                    }
                    g[p + tri(i, i)] = u[i] * z[i] * diag[i] - 1.0;
                }
            }
        }
        Ok(g)
    }

    /// Chains a gradient with respect to `theta = mu + L noise` back onto the flattened
    /// parameters, accumulating `scale * d theta / d lambda` into `out`.
    pub(crate) fn add_pullback(&self, noise: &[f64], grad_theta: &[f64], weight: f64, out: &mut [f64]) {
        let p = self.dim();
        for i in 0..p {
            out[i] += weight * grad_theta[i];
        }
        match self.kind {
            FamilyKind::MeanField => {
                for i in 0..p {
                    out[p + i] += weight * grad_theta[i] * noise[i] * self.scale[i].exp();
                }
            }
            FamilyKind::FullRank => {
                for i in 0..p {
                    let gi = weight * grad_theta[i];
                    let base = p + tri(i, 0);
                    for j in 0..i {
                        out[base + j] += gi * noise[j];
                    }
                    out[base + i] += gi * noise[i] * self.scale[tri(i, i)].exp();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn sample_examples() {
        let p = VariationalParams::standard(FamilyKind::FullRank, 3);
        assert_eq!(p.sample(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);

        let mf = VariationalParams::mean_field(vec![1.0, 2.0], &[2.0, 3.0]).unwrap();
        let s = mf.sample(&[1.0, 1.0]).unwrap();
        assert!(close(s[0], 3.0, 1e-14) && close(s[1], 5.0, 1e-14));

        let fr = VariationalParams::full_rank(vec![0.0, 0.0], &dmatrix![1.0, 0.0; 0.5, 2.0]).unwrap();
        let s = fr.sample(&[1.0, 1.0]).unwrap();
        assert!(close(s[0], 1.0, 1e-14) && close(s[1], 2.5, 1e-14));
    }

    #[test]
    fn sample_rejects_wrong_noise_length() {
        let p = VariationalParams::standard(FamilyKind::MeanField, 2);
        assert!(matches!(p.sample(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(p.log_density(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn log_density_examples() {
        let p1 = VariationalParams::standard(FamilyKind::MeanField, 1);
        assert!(close(p1.log_density(&[0.0]).unwrap(), -0.918_938_533_204_672_7, 1e-12));
        let p2 = VariationalParams::standard(FamilyKind::FullRank, 2);
        assert!(close(p2.log_density(&[0.0, 0.0]).unwrap(), -1.837_877_066_409_345_3, 1e-12));

        // L = [[2,0],[1,1]], x = (2,1): z = (1, 0) by forward substitution.
        let fr = VariationalParams::full_rank(vec![0.0, 0.0], &dmatrix![2.0, 0.0; 1.0, 1.0]).unwrap();
        let expected = -(2.0 * PI).ln() - 2f64.ln() - 0.5;
        assert!(close(fr.log_density(&[2.0, 1.0]).unwrap(), expected, 1e-12));
    }

    #[test]
    fn entropy_examples() {
        let p1 = VariationalParams::standard(FamilyKind::FullRank, 1);
        assert!(close(p1.entropy(), 1.418_938_533_204_672_7, 1e-12));
        let p2 = VariationalParams::standard(FamilyKind::MeanField, 2);
        assert!(close(p2.entropy(), 2.837_877_066_409_345_3, 1e-12));

        let base = VariationalParams::full_rank(vec![0.3, -1.0, 2.0], &dmatrix![1.0, 0.0, 0.0; 0.2, 0.5, 0.0; -0.4, 0.1, 3.0]).unwrap();
        let scaled = VariationalParams::full_rank(
            vec![0.3, -1.0, 2.0],
            &dmatrix![1.0, 0.0, 0.0; 0.2, 0.5, 0.0; -0.4, 0.1, 3.0].map(|v| v * std::f64::consts::E),
        )
        .unwrap();
        assert!(close(scaled.entropy() - base.entropy(), 3.0, 1e-12));
    }

    #[test]
    fn entropy_gradient_structure() {
        let fr = VariationalParams::new(FamilyKind::FullRank, vec![0.1, 0.2], vec![0.3, -0.5, 0.7]).unwrap();
        assert_eq!(fr.entropy_gradient(), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        let mf = VariationalParams::new(FamilyKind::MeanField, vec![0.1, 0.2], vec![0.3, 0.7]).unwrap();
        assert_eq!(mf.entropy_gradient(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn flat_layout() {
        assert_eq!(FamilyKind::MeanField.num_params(4), 8);
        assert_eq!(FamilyKind::FullRank.num_params(4), 14);
        assert_eq!(FamilyKind::FullRank.dim_from_num_params(14), Some(4));
        assert_eq!(FamilyKind::FullRank.dim_from_num_params(13), None);
        assert_eq!(FamilyKind::MeanField.dim_from_num_params(8), Some(4));
        let fr = VariationalParams::full_rank(vec![5.0, 6.0], &dmatrix![1.0, 0.0; 0.5, 2.0]).unwrap();
        let flat = fr.to_flat();
        assert_eq!(flat[..4], [5.0, 6.0, 0.0, 0.5]);
        assert!(close(flat[4], 2f64.ln(), 1e-15));
    }

    #[test]
    fn covariance_examples() {
        let mf = VariationalParams::mean_field(vec![0.0, 0.0], &[2.0, 3.0]).unwrap();
        let c = mf.covariance();
        assert!(close(c[(0, 0)], 4.0, 1e-12) && close(c[(1, 1)], 9.0, 1e-12) && c[(0, 1)] == 0.0);
        let fr = VariationalParams::full_rank(vec![0.0, 0.0], &dmatrix![1.0, 0.0; 1.0, 1.0]).unwrap();
        let c = fr.covariance();
        assert_eq!((c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]), (1.0, 1.0, 1.0, 2.0));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(VariationalParams::new(FamilyKind::FullRank, vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(VariationalParams::mean_field(vec![0.0], &[0.0]).is_err());
        assert!(VariationalParams::new(FamilyKind::MeanField, vec![f64::NAN], vec![0.0]).is_err());
    }
}
