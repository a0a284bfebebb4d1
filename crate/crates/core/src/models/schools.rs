use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{normal_logpdf, Model};
use crate::error::{Error, Result};

const CANONICAL: &str = include_str!("../../data/eight_schools.csv");

/// Prior standard deviation of the population mean.
const MU_PRIOR_SD: f64 = 5.0;
/// Half-Cauchy scale for the population standard deviation.
const TAU_PRIOR_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    Centered,
    NonCentered,
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::Centered => "cp",
            Parameterization::NonCentered => "ncp",
        })
    }
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" | "centered" => Ok(Parameterization::Centered),
            "ncp" | "non_centered" | "noncentered" => Ok(Parameterization::NonCentered),
            other => Err(Error::invalid(format!("unknown parameterization '{other}'"))),
        }
    }
}

/// Hierarchical normal model for the eight-schools data.
///
/// Unconstrained coordinates are `[μ, ln τ, θ₁..θⱼ]` (centered) or
/// `[μ, ln τ, z₁..zⱼ]` with `θⱼ = μ + τ zⱼ` (non-centered). Priors:
/// `μ ~ N(0, 5²)`, `τ ~ Half-Cauchy(0, 5)`, with the log-transform Jacobian included.
#[derive(Debug, Clone)]
pub struct EightSchools {
    effects: Vec<f64>,
    std_errs: Vec<f64>,
    param: Parameterization,
}

impl EightSchools {
    pub fn new(effects: Vec<f64>, std_errs: Vec<f64>, param: Parameterization) -> Result<Self> {
        Error::check_dim(effects.len(), std_errs.len())?;
        if effects.is_empty() {
            return Err(Error::Data("at least one school is required".into()));
        }
        if let Some(bad) = std_errs.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Data(format!("standard errors must be positive, found {bad}")));
        }
        Ok(Self { effects, std_errs, param })
    }

    /// The canonical data shipped with the crate.
    pub fn canonical(param: Parameterization) -> Self {
        let (y, s) = parse_schools(CANONICAL.as_bytes(), "eight_schools.csv").expect("bundled data is valid");
        Self::new(y, s, param).expect("bundled data is valid")
    }

    /// Reads a two-column CSV (effect, standard error) with a header row.
    pub fn from_csv(path: impl AsRef<Path>, param: Parameterization) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let (y, s) = parse_schools(&bytes, &path.display().to_string())?;
        Self::new(y, s, param)
    }

    pub fn parameterization(&self) -> Parameterization {
        self.param
    }

    pub fn num_schools(&self) -> usize {
        self.effects.len()
    }

    fn hyper_prior(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mu = theta[0];
        let log_tau = theta[1];
        let tau = log_tau.exp();
        let r = tau / TAU_PRIOR_SCALE;
        grad[0] -= mu / (MU_PRIOR_SD * MU_PRIOR_SD);
        // d/ds [ln HalfCauchy(e^s) + s]
        grad[1] += 1.0 - 2.0 * r * r / (1.0 + r * r);
        normal_logpdf(mu, 0.0, MU_PRIOR_SD) + (2.0 / (PI * TAU_PRIOR_SCALE)).ln() - (r * r).ln_1p() + log_tau
    }
}

fn parse_schools(bytes: &[u8], name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let mut y = Vec::new();
    let mut s = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != 2 {
            return Err(Error::Data(format!("{name}:{line}: expected 2 columns, found {}", record.len())));
        }
        let parse = |f: &str| f.parse::<f64>().map_err(|_| Error::Data(format!("{name}:{line}: '{f}' is not a number")));
        y.push(parse(&record[0])?);
        s.push(parse(&record[1])?);
    }
    Ok((y, s))
}

impl Model for EightSchools {
    fn name(&self) -> &str {
        match self.param {
            Parameterization::Centered => "eight_schools_cp",
            Parameterization::NonCentered => "eight_schools_ncp",
        }
    }

    fn dim(&self) -> usize {
        self.effects.len() + 2
    }

    fn data_size(&self) -> usize {
        self.effects.len()
    }

    fn log_prior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut total = self.hyper_prior(theta, grad);
        match self.param {
            Parameterization::Centered => {
                let mu = theta[0];
                let tau = theta[1].exp();
                for j in 0..self.effects.len() {
                    let d = theta[2 + j] - mu;
                    let w = d / (tau * tau);
                    grad[2 + j] -= w;
                    grad[0] += w;
                    grad[1] += d * w - 1.0;
                    total += normal_logpdf(theta[2 + j], mu, tau);
                }
            }
            Parameterization::NonCentered => {
                for j in 0..self.effects.len() {
                    let z = theta[2 + j];
                    grad[2 + j] -= z;
                    total += normal_logpdf(z, 0.0, 1.0);
                }
            }
        }
        total
    }

    fn log_lik_grad(&self, theta: &[f64], i: usize, grad: &mut [f64]) -> f64 {
        let sd = self.std_errs[i];
        match self.param {
            Parameterization::Centered => {
                let r = self.effects[i] - theta[2 + i];
                grad[2 + i] += r / (sd * sd);
                normal_logpdf(self.effects[i], theta[2 + i], sd)
            }
            Parameterization::NonCentered => {
                let tau = theta[1].exp();
                let z = theta[2 + i];
                let effect = theta[0] + tau * z;
                let w = (self.effects[i] - effect) / (sd * sd);
                grad[0] += w;
                grad[1] += w * tau * z;
                grad[2 + i] += w * tau;
                normal_logpdf(self.effects[i], effect, sd)
            }
        }
    }
}
