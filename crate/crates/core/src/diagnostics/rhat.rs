use statrs::distribution::{ContinuousCDF, Normal};

use super::IterateChains;
use crate::error::{Error, Result};

/// Reported when every half-sequence is constant but their means differ.
pub const DEGENERATE_RHAT: f64 = 1.0e6;

/// Split-R̂ per component over the last `window` iterates of every chain.
///
/// Each chain's window is cut into two halves of length `n = window / 2`. With `Ŵ` the
/// mean within-half variance and `B̂/n` the variance of the half means,
/// `V̂ = (n − 1)/n · Ŵ + B̂/n` and `R̂ = max(1, √(V̂/Ŵ))`.
pub fn split_rhat(chains: &IterateChains, window: usize) -> Result<Vec<f64>> {
    check_split_window(chains, window)?;
    Ok((0..chains.num_params())
        .map(|k| {
            let halves = split_halves(chains, k, window);
            rhat_of_sequences(&halves)
        })
        .collect())
}

/// Split-R̂ after replacing every value with its normal score among all pooled draws.
pub fn split_rhat_rank_normalized(chains: &IterateChains, window: usize) -> Result<Vec<f64>> {
    check_split_window(chains, window)?;
    Ok((0..chains.num_params())
        .map(|k| {
            let halves = split_halves(chains, k, window);
            rhat_of_sequences(&rank_normalize(&halves))
        })
        .collect())
}

fn check_split_window(chains: &IterateChains, window: usize) -> Result<()> {
    if window % 2 != 0 {
        return Err(Error::invalid(format!("split-R̂ window must be even, got {window}")));
    }
    chains.check_window(window, 4)
}

pub(crate) fn split_halves(chains: &IterateChains, k: usize, window: usize) -> Vec<Vec<f64>> {
    let half = window / 2;
    let mut out = Vec::with_capacity(2 * chains.num_chains());
    for j in 0..chains.num_chains() {
        let seq = chains.component_tail(j, k, window);
        out.push(seq[..half].to_vec());
        out.push(seq[seq.len() - half..].to_vec());
    }
    out
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// R̂ of equal-length sequences treated as separate chains.
pub(crate) fn rhat_of_sequences(seqs: &[Vec<f64>]) -> f64 {
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let within = seqs.iter().map(|s| sample_variance(s)).sum::<f64>() / seqs.len() as f64;
    let between = if seqs.len() > 1 { n * sample_variance(&means) } else { 0.0 };
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { DEGENERATE_RHAT };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    // the (n - 1)/n factor can push the ratio just under one; report 1 there
    (var_plus / within).sqrt().max(1.0)
}

fn rank_normalize(seqs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize)> = seqs.iter().flatten().copied().zip(0..).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = all.len();
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // average rank over ties, 1-based
        let r = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            ranks[item.1] = r;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let scores: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (total as f64 + 0.25)))
        .collect();
    let len = seqs[0].len();
    scores.chunks(len).map(<[f64]>::to_vec).collect()
}
