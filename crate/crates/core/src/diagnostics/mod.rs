//! Convergence diagnostics for streams of optimizer iterates.
//!
//! Iterates are treated as draws from `J` Markov chains: split-R̂ detects
//! stationarity, the effective sample size and Monte Carlo standard error measure
//! how well an average of the iterates is pinned down, and generalized-Pareto tail
//! indices flag heavy-tailed iterates or importance weights.

use serde::Serialize;

mod chains;
mod ess;
mod pareto;
mod rhat;

pub use chains::IterateChains;
pub use ess::{autocorrelation, chain_autocorrelations, ess, ess_with_flags, mcse, pooled_variance, Autocorrelation};
pub use pareto::{
    gpd_fit, khat_iterates, psis_khat, tail_size, upper_tail_khat, GpdFit, TailIndices, KHAT_PROBLEM_THRESHOLD,
    MIN_EXCESSES,
};
pub use rhat::{split_rhat, split_rhat_rank_normalized, DEGENERATE_RHAT};

use crate::error::Result;

/// Lags kept per component in [`DiagnosticsReport::autocorr`].
pub const REPORT_MAX_LAG: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub window: usize,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub mcse: Vec<f64>,
    /// Chain-averaged autocorrelation per component, lags `0..=REPORT_MAX_LAG`.
    pub autocorr: Vec<Vec<f64>>,
    /// `None` when the window is too short for a tail fit.
    pub khat_lower: Option<Vec<f64>>,
    pub khat_upper: Option<Vec<f64>>,
    pub max_rhat: f64,
    pub median_mcse: f64,
    pub min_ess: f64,
    pub median_ess: f64,
    pub max_khat: Option<f64>,
    /// Components whose window had zero variance.
    pub degenerate: Vec<usize>,
    /// Components whose ESS exceeds the nominal draw count.
    pub super_efficient: Vec<usize>,
}

impl DiagnosticsReport {
    /// Largest lag-1 autocorrelation over components.
    pub fn max_lag_one_autocorr(&self) -> f64 {
        self.autocorr.iter().filter_map(|r| r.get(1).copied()).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// All diagnostics over the last `window` iterates (`window` even, at least 4).
pub fn compute_report(chains: &IterateChains, window: usize) -> Result<DiagnosticsReport> {
    let rhat = split_rhat(chains, window)?;
    let (ess, flags) = ess_with_flags(chains, window)?;
    let mcse = ess::mcse_from(chains, window, &ess)?;
    let autocorr = chain_autocorrelations(chains, window, REPORT_MAX_LAG)?;
    let tails = if window >= 100 { Some(khat_iterates(chains, window)?) } else { None };
    let nominal = (window * chains.num_chains()) as f64;
    Ok(DiagnosticsReport {
        window,
        max_rhat: rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        median_mcse: median(&mcse),
        min_ess: ess.iter().copied().fold(f64::INFINITY, f64::min),
        median_ess: median(&ess),
        max_khat: tails.as_ref().map(|t| t.max),
        degenerate: flags.iter().enumerate().filter(|(_, d)| **d).map(|(k, _)| k).collect(),
        super_efficient: ess.iter().enumerate().filter(|(_, e)| **e > nominal).map(|(k, _)| k).collect(),
        khat_lower: tails.as_ref().map(|t| t.lower.clone()),
        khat_upper: tails.map(|t| t.upper),
        rhat,
        ess,
        mcse,
        autocorr,
    })
}
