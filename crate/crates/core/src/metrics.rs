//! Distances between variational and reference posterior moments.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::VariationalParams;
use crate::models::Model;

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentDistance {
    /// Euclidean distance between means.
    pub d_mu: f64,
    /// Square root of the Frobenius norm of the covariance difference.
    pub d_sigma: f64,
    /// `√(d_mu² + d_sigma²)`.
    pub d: f64,
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{name} is {}x{}, expected a square matrix", m.nrows(), m.ncols())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!("{name} is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

pub fn moment_distance(
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    mu_ref: &DVector<f64>,
    sigma_ref: &DMatrix<f64>,
) -> Result<MomentDistance> {
    let p = mu_ref.len();
    Error::check_dim(p, mu_hat.len())?;
    check_symmetric("estimated covariance", sigma_hat)?;
    check_symmetric("reference covariance", sigma_ref)?;
    Error::check_dim(p, sigma_hat.nrows())?;
    Error::check_dim(p, sigma_ref.nrows())?;
    let d_mu = (mu_hat - mu_ref).norm();
    let d_sigma = (sigma_hat - sigma_ref).norm().sqrt();
    Ok(MomentDistance { d_mu, d_sigma, d: d_mu.hypot(d_sigma) })
}

/// Mean and covariance `(μ, L Lᵀ)` of a Gaussian approximation.
pub fn variational_moments(params: &VariationalParams) -> (DVector<f64>, DMatrix<f64>) {
    (DVector::from_column_slice(params.location()), params.covariance())
}

/// Distance of a variational approximation from reference moments.
pub fn params_distance(
    params: &VariationalParams,
    reference: &(DVector<f64>, DMatrix<f64>),
) -> Result<MomentDistance> {
    let (mu, sigma) = variational_moments(params);
    moment_distance(&mu, &sigma, &reference.0, &reference.1)
}

#[derive(Debug, Deserialize)]
struct ReferenceFile {
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

/// Loads reference moments from JSON of the form
/// `{"mean": [...], "covariance": [...]}` with the covariance flattened row-major.
pub fn load_reference_moments(path: &Path, dim: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: cannot read reference moments: {e}", path.display())))?;
    let parsed: ReferenceFile = serde_json::from_str(&text).map_err(|e| {
        Error::Data(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })?;
    if parsed.mean.len() != dim {
        return Err(Error::Data(format!("{}: mean has {} entries, model dimension is {dim}", path.display(), parsed.mean.len())));
    }
    if parsed.covariance.len() != dim * dim {
        return Err(Error::Data(format!(
            "{}: covariance has {} entries, expected {}",
            path.display(),
            parsed.covariance.len(),
            dim * dim
        )));
    }
    let cov = DMatrix::from_row_slice(dim, dim, &parsed.covariance);
    check_symmetric("reference covariance", &cov)?;
    Ok((DVector::from_vec(parsed.mean), cov))
}

/// Reference moments from the model when known analytically, otherwise from `path`.
pub fn reference_moments(model: &dyn Model, path: Option<&Path>) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    if let Some(m) = model.analytic_moments() {
        return Ok(Some(m));
    }
    path.map(|p| load_reference_moments(p, model.dim())).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilyKind;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let zero = dvector![0.0, 0.0];
        assert_eq!(moment_distance(&zero, &eye, &zero, &eye).unwrap(), MomentDistance { d_mu: 0.0, d_sigma: 0.0, d: 0.0 });
        let d = moment_distance(&dvector![3.0, 4.0], &eye, &zero, &eye).unwrap();
        assert_eq!((d.d_mu, d.d), (5.0, 5.0));
        let d = moment_distance(&zero, &(2.0 * &eye), &zero, &eye).unwrap();
        assert!((d.d_sigma - 2f64.sqrt().sqrt()).abs() < 1e-12);
        assert!((d.d_sigma - 1.1892).abs() < 1e-4);
    }

    #[test]
    fn shape_and_symmetry_errors() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let zero = dvector![0.0, 0.0];
        assert!(moment_distance(&dvector![0.0], &eye, &zero, &eye).is_err());
        let asym = dmatrix![1.0, 0.1; 0.0, 1.0];
        assert!(moment_distance(&zero, &asym, &zero, &eye).is_err());
        assert!(moment_distance(&zero, &DMatrix::identity(3, 3), &zero, &eye).is_err());
    }

    #[test]
    fn moments_of_params() {
        let (m, c) = variational_moments(&VariationalParams::standard(FamilyKind::FullRank, 2));
        assert_eq!((m, c), (dvector![0.0, 0.0], DMatrix::identity(2, 2)));
        let mf = VariationalParams::new(FamilyKind::MeanField, vec![0.0; 2], vec![2f64.ln(), 3f64.ln()]).unwrap();
        let c = variational_moments(&mf).1;
        assert!((c - dmatrix![4.0, 0.0; 0.0, 9.0]).amax() < 1e-12);
        let fr = VariationalParams::full_rank(vec![0.0; 2], &dmatrix![1.0, 0.0; 1.0, 1.0]).unwrap();
        assert!((variational_moments(&fr).1 - dmatrix![1.0, 1.0; 1.0, 2.0]).amax() < 1e-12);
    }

    #[test]
    fn moments_of_average_differ_from_average_of_moments() {
        // log-sd 0 and 2: averaged parameters give variance e², averaged variances give (1 + e⁴)/2
        let a = VariationalParams::new(FamilyKind::MeanField, vec![0.0], vec![0.0]).unwrap();
        let b = VariationalParams::new(FamilyKind::MeanField, vec![0.0], vec![2.0]).unwrap();
        let avg = VariationalParams::new(FamilyKind::MeanField, vec![0.0], vec![1.0]).unwrap();
        let of_avg = variational_moments(&avg).1[(0, 0)];
        let avg_of = 0.5 * (variational_moments(&a).1[(0, 0)] + variational_moments(&b).1[(0, 0)]);
        assert!((of_avg - 1f64.exp().powi(2)).abs() < 1e-12);
        assert!((avg_of - (1.0 + 4f64.exp()) / 2.0).abs() < 1e-12);
        assert!(avg_of - of_avg > 20.0);
    }

    #[test]
    fn reference_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("robustvi-ref-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.json");
        std::fs::write(&good, r#"{"mean": [1.0, 2.0], "covariance": [2.0, 0.5, 0.5, 1.0]}"#).unwrap();
        let (m, c) = load_reference_moments(&good, 2).unwrap();
        assert_eq!(m, dvector![1.0, 2.0]);
        assert_eq!(c, dmatrix![2.0, 0.5; 0.5, 1.0]);
        assert!(load_reference_moments(&good, 3).is_err());
        let bad = dir.join("bad.json");
        std::fs::write(&bad, "{\"mean\": [1.0,\n oops]}").unwrap();
        let msg = load_reference_moments(&bad, 2).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    fn sym(v: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(2, 2, v);
        &a + a.transpose()
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(
            a in prop::collection::vec(-5.0f64..5.0, 2),
            b in prop::collection::vec(-5.0f64..5.0, 2),
            c in prop::collection::vec(-5.0f64..5.0, 2),
            s in prop::collection::vec(-5.0f64..5.0, 4),
            t in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let (a, b, c) = (DVector::from_vec(a), DVector::from_vec(b), DVector::from_vec(c));
            let (s, t) = (sym(&s), sym(&t));
            let ab = moment_distance(&a, &s, &b, &t).unwrap();
            let ba = moment_distance(&b, &t, &a, &s).unwrap();
            prop_assert_eq!(ab, ba);
            let ac = moment_distance(&a, &s, &c, &s).unwrap().d_mu;
            let cb = moment_distance(&c, &s, &b, &s).unwrap().d_mu;
            prop_assert!(ab.d_mu <= ac + cb + 1e-12);
            prop_assert_eq!(moment_distance(&a, &s, &a, &s).unwrap().d_sigma, 0.0);
            prop_assert!((ab.d - ab.d_mu.hypot(ab.d_sigma)).abs() < 1e-12);
        }
    }
}
