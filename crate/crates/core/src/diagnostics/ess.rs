use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use std::sync::Arc;

use super::rhat::{mean, sample_variance};
use super::IterateChains;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Autocorrelation {
    /// `rho[t]` for lags `0..n`; `rho[0] == 1`.
    pub rho: Vec<f64>,
    /// The sequence had zero variance; all lags past zero are reported as 0.
    pub degenerate: bool,
}

struct AutocovPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl AutocovPlan {
    fn new(n: usize) -> Self {
        let size = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(size), inverse: planner.plan_fft_inverse(size) }
    }

    /// Biased (divisor n) autocovariance at lags `0..n`.
    fn autocov(&self, xs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xs.len(), self.n);
        let m = mean(xs);
        let size = self.forward.len();
        let mut buf: Vec<Complex<f64>> = xs.iter().map(|x| Complex::new(x - m, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (size as f64 * self.n as f64);
        buf[..self.n].iter().map(|c| c.re * scale).collect()
    }
}

/// Empirical autocorrelation of a single sequence at every lag, mean removed.
pub fn autocorrelation(xs: &[f64]) -> Result<Autocorrelation> {
    if xs.len() < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: xs.len() });
    }
    let acov = AutocovPlan::new(xs.len()).autocov(xs);
    Ok(normalize(acov, xs.len()))
}

fn normalize(acov: Vec<f64>, n: usize) -> Autocorrelation {
    if acov[0] <= 0.0 {
        let mut rho = vec![0.0; n];
        rho[0] = 1.0;
        return Autocorrelation { rho, degenerate: true };
    }
    let c0 = acov[0];
    let mut rho: Vec<f64> = acov.into_iter().map(|c| c / c0).collect();
    rho[0] = 1.0;
    Autocorrelation { rho, degenerate: false }
}

/// Splits each chain's last `window` iterates of component `k` into two halves,
/// dropping the middle draw when `window` is odd.
fn split_sequences(chains: &IterateChains, k: usize, window: usize) -> Vec<Vec<f64>> {
    let half = window / 2;
    let mut out = Vec::with_capacity(2 * chains.num_chains());
    for j in 0..chains.num_chains() {
        let seq = chains.component_tail(j, k, window);
        out.push(seq[..half].to_vec());
        out.push(seq[seq.len() - half..].to_vec());
    }
    out
}

/// Multi-chain effective sample size of equal-length sequences.
///
/// Combined autocorrelations `ρ̂ₜ = 1 − (Ŵ − mean acovₜ)/V̂` are summed in pairs up to
/// the first negative pair (Geyer's initial positive sequence), made monotone, and
/// `ESS = MN / τ̂`. Returns `None` for zero-variance input.
fn ess_of_sequences(seqs: &[Vec<f64>], plan: &AutocovPlan) -> Option<f64> {
    let m = seqs.len();
    let n = seqs[0].len();
    let acovs: Vec<Vec<f64>> = seqs.iter().map(|s| plan.autocov(s)).collect();
    let mean_acov = |t: usize| acovs.iter().map(|a| a[t]).sum::<f64>() / m as f64;

    let nf = n as f64;
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return None;
    }
    let rho_at = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 3 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    // index of the last accepted lag; -1 when even the first pair was negative
    let max_t = t as isize - 2;
    let next = (max_t + 1) as usize;
    if rho_even > 0.0 {
        rho[next] = rho_even;
    }
    let mut t = 1;
    while t as isize <= max_t - 2 {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let nominal = (m * n) as f64;
    let head: f64 = rho[..next].iter().sum();
    let tau = (-1.0 + 2.0 * head + rho[next]).max(1.0 / nominal.log10());
    Some(nominal / tau)
}

/// Effective sample size and degenerate flag for each component over the last
/// `window` iterates of every chain (split in halves).
pub fn ess_with_flags(chains: &IterateChains, window: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    chains.check_window(window, 4)?;
    let half = window / 2;
    let plan = AutocovPlan::new(half);
    let nominal = (2 * half * chains.num_chains()) as f64;
    let results: Vec<Option<f64>> = (0..chains.num_params())
        .into_par_iter()
        .map(|k| ess_of_sequences(&split_sequences(chains, k, window), &plan))
        .collect();
    let flags = results.iter().map(Option::is_none).collect();
    let values = results.into_iter().map(|r| r.unwrap_or(nominal)).collect();
    Ok((values, flags))
}

pub fn ess(chains: &IterateChains, window: usize) -> Result<Vec<f64>> {
    ess_with_flags(chains, window).map(|(v, _)| v)
}

/// Variance of all pooled draws in the window, per component.
pub fn pooled_variance(chains: &IterateChains, window: usize) -> Result<Vec<f64>> {
    chains.check_window(window, 2)?;
    Ok((0..chains.num_params())
        .map(|k| {
            let pooled: Vec<f64> = (0..chains.num_chains()).flat_map(|j| chains.component_tail(j, k, window)).collect();
            sample_variance(&pooled)
        })
        .collect())
}

/// `√(V / ESS)` per component; zero for degenerate components.
pub fn mcse(chains: &IterateChains, window: usize) -> Result<Vec<f64>> {
    let (ess, _) = ess_with_flags(chains, window)?;
    mcse_from(chains, window, &ess)
}

pub(crate) fn mcse_from(chains: &IterateChains, window: usize, ess: &[f64]) -> Result<Vec<f64>> {
    let var = pooled_variance(chains, window)?;
    Ok(var.iter().zip(ess).map(|(v, e)| if *v > 0.0 { (v / e).sqrt() } else { 0.0 }).collect())
}

/// Chain-averaged autocorrelation of each component for lags `0..=max_lag`.
pub fn chain_autocorrelations(chains: &IterateChains, window: usize, max_lag: usize) -> Result<Vec<Vec<f64>>> {
    chains.check_window(window, 4)?;
    let plan = AutocovPlan::new(window);
    let lags = max_lag.min(window - 1) + 1;
    Ok((0..chains.num_params())
        .into_par_iter()
        .map(|k| {
            let mut acov = vec![0.0; window];
            for j in 0..chains.num_chains() {
                for (a, c) in acov.iter_mut().zip(plan.autocov(&chains.component_tail(j, k, window))) {
                    *a += c;
                }
            }
            let mut rho = normalize(acov, window).rho;
            rho.truncate(lags);
            rho
        })
        .collect())
}
