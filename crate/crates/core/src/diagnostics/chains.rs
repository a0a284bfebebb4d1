use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `J` parallel iterate trajectories over `K` flattened parameters.
///
/// Row `t` of every chain corresponds to global iteration
/// `start_iteration + t * stride`. All chains are kept at the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateChains {
    num_params: usize,
    start_iteration: usize,
    stride: usize,
    chains: Vec<Vec<f64>>,
}

impl IterateChains {
    pub fn new(num_chains: usize, num_params: usize, start_iteration: usize) -> Result<Self> {
        if num_chains == 0 || num_params == 0 {
            return Err(Error::invalid("need at least one chain and one parameter"));
        }
        Ok(Self { num_params, start_iteration, stride: 1, chains: vec![Vec::new(); num_chains] })
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        self.stride = stride;
        Ok(self)
    }

    /// Builds chains from per-chain lists of iterates.
    pub fn from_iterates(iterates: &[Vec<Vec<f64>>], start_iteration: usize) -> Result<Self> {
        let k = iterates.first().and_then(|c| c.first()).map(Vec::len).unwrap_or(0);
        let mut out = Self::new(iterates.len(), k, start_iteration)?;
        let t = iterates[0].len();
        for (j, chain) in iterates.iter().enumerate() {
            if chain.len() != t {
                return Err(Error::invalid(format!("chain {j} has {} iterates, expected {t}", chain.len())));
            }
            for it in chain {
                out.push(j, it)?;
            }
        }
        Ok(out)
    }

    /// Appends one iterate to chain `j`. Non-finite values are rejected.
    pub fn push(&mut self, chain: usize, iterate: &[f64]) -> Result<()> {
        Error::check_dim(self.num_params, iterate.len())?;
        if chain >= self.chains.len() {
            return Err(Error::invalid(format!("chain index {chain} out of range")));
        }
        if let Some(k) = iterate.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("component {k} of chain {chain}")));
        }
        self.chains[chain].extend_from_slice(iterate);
        Ok(())
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn start_iteration(&self) -> usize {
        self.start_iteration
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Iterates stored per chain (the shortest chain, if they differ mid-append).
    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.len() / self.num_params).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global iteration number of stored row `t`.
    pub fn iteration_of(&self, t: usize) -> usize {
        self.start_iteration + t * self.stride
    }

    pub fn iterate(&self, chain: usize, t: usize) -> &[f64] {
        &self.chains[chain][t * self.num_params..(t + 1) * self.num_params]
    }

    pub fn last(&self, chain: usize) -> Option<&[f64]> {
        let t = self.len();
        (t > 0).then(|| self.iterate(chain, t - 1))
    }

    /// Component `k` of chain `j` over the last `window` stored iterates.
    pub fn component_tail(&self, chain: usize, k: usize, window: usize) -> Vec<f64> {
        let t = self.len();
        (t - window..t).map(|i| self.chains[chain][i * self.num_params + k]).collect()
    }

    pub(crate) fn check_window(&self, window: usize, min: usize) -> Result<()> {
        if window < min {
            return Err(Error::InsufficientSamples { needed: min, got: window });
        }
        if window > self.len() {
            return Err(Error::invalid(format!("window {window} exceeds the {} stored iterates", self.len())));
        }
        Ok(())
    }

    /// Componentwise mean over the last `window` iterates of every chain.
    pub fn mean_tail(&self, window: usize) -> Result<Vec<f64>> {
        if window == 0 || window > self.len() {
            return Err(Error::invalid(format!("cannot average {window} of {} iterates", self.len())));
        }
        let t = self.len();
        let mut sum = vec![0.0; self.num_params];
        for chain in 0..self.num_chains() {
            for i in t - window..t {
                for (s, v) in sum.iter_mut().zip(self.iterate(chain, i)) {
                    *s += v;
                }
            }
        }
        let count = (window * self.num_chains()) as f64;
        Ok(sum.into_iter().map(|s| s / count).collect())
    }

    /// Keeps only the last `window` iterates of every chain.
    pub fn retain_tail(&mut self, window: usize) {
        let t = self.len();
        if window >= t {
            return;
        }
        let drop = (t - window) * self.num_params;
        for chain in &mut self.chains {
            chain.drain(..drop);
        }
        self.start_iteration += (t - window) * self.stride;
    }
}
