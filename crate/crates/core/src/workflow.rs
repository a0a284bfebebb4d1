//! The robust optimization workflow and the ΔELBO baseline.
//!
//! [`run`] advances `J` independent optimizer chains. Every `W` iterations it
//! computes split-R̂ over the last `W` iterates; once the largest value drops below
//! `τ` the iterates are treated as draws from the stationary distribution and
//! averaged. Averaging continues until the median Monte Carlo standard error of the
//! average falls below `ε` and the effective sample size exceeds `e`. The baseline rule
//! instead stops when consecutive windowed means of the ELBO estimate stop changing.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    compute_report, ess_with_flags, khat_iterates, median, pooled_variance, split_rhat, split_rhat_rank_normalized,
    DiagnosticsReport, IterateChains, KHAT_PROBLEM_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::families::{FamilyKind, VariationalParams};
use crate::gradients::{estimate_grad, MinibatchSampler};
use crate::models::Model;
use crate::optimizers::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// R̂ stationarity followed by MCSE and ESS on the running average.
    Mcse,
    /// Relative change of windowed ELBO means.
    Delbo,
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoppingRule::Mcse => "mcse",
            StoppingRule::Delbo => "delbo",
        })
    }
}

impl FromStr for StoppingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mcse" => Ok(StoppingRule::Mcse),
            "delbo" | "elbo" => Ok(StoppingRule::Delbo),
            other => Err(Error::invalid(format!("unknown stopping rule '{other}' (expected mcse or delbo)"))),
        }
    }
}

/// How per-component effective sample sizes are compared with the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EssAggregate {
    Min,
    Median,
}

impl FromStr for EssAggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(EssAggregate::Min),
            "median" => Ok(EssAggregate::Median),
            other => Err(Error::invalid(format!("unknown ESS aggregate '{other}' (expected min or median)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub eta: f64,
    pub num_chains: usize,
    pub window: usize,
    pub rhat_cutoff: f64,
    pub mcse_cutoff: f64,
    pub ess_cutoff: f64,
    pub t_max: usize,
    pub optimizer: OptimizerKind,
    /// Monte Carlo draws per gradient estimate.
    pub num_draws: usize,
    /// `None` uses every observation at every step.
    pub minibatch: Option<usize>,
    pub stopping_rule: StoppingRule,
    pub delbo_epsilon: f64,
    pub seed: u64,
    /// Standard deviation of the random initial locations.
    pub init_scale: f64,
    /// Explicit initial location per chain; overrides the random draw.
    pub init_locations: Option<Vec<Vec<f64>>>,
    pub clip_norm: Option<f64>,
    pub ess_aggregate: EssAggregate,
    pub rank_normalized_rhat: bool,
    /// Record every `n`th iterate of the whole run.
    pub trace_thin: Option<usize>,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            num_chains: 1,
            window: 100,
            rhat_cutoff: 1.1,
            mcse_cutoff: 0.02,
            ess_cutoff: 20.0,
            t_max: 120_000,
            optimizer: OptimizerKind::Rmsprop,
            num_draws: 10,
            minibatch: None,
            stopping_rule: StoppingRule::Mcse,
            delbo_epsilon: 0.01,
            seed: 0,
            init_scale: 0.1,
            init_locations: None,
            clip_norm: None,
            ess_aggregate: EssAggregate::Min,
            rank_normalized_rhat: false,
            trace_thin: None,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if self.num_chains == 0 {
            return fail("num_chains must be at least 1".into());
        }
        if self.window < 4 || self.window % 2 != 0 {
            return fail(format!("window must be even and at least 4, got {}", self.window));
        }
        if !(self.rhat_cutoff > 1.0) {
            return fail(format!("rhat_cutoff must exceed 1, got {}", self.rhat_cutoff));
        }
        if !(self.mcse_cutoff > 0.0) {
            return fail(format!("mcse_cutoff must be positive, got {}", self.mcse_cutoff));
        }
        if !(self.ess_cutoff >= 0.0) {
            return fail(format!("ess_cutoff must be non-negative, got {}", self.ess_cutoff));
        }
        if !(self.delbo_epsilon > 0.0) {
            return fail(format!("delbo_epsilon must be positive, got {}", self.delbo_epsilon));
        }
        if self.t_max < self.window {
            return fail(format!("t_max ({}) must be at least the window ({})", self.t_max, self.window));
        }
        if self.num_draws == 0 {
            return fail("num_draws must be at least 1".into());
        }
        if self.minibatch == Some(0) {
            return fail("minibatch size must be at least 1".into());
        }
        if !(self.init_scale >= 0.0) {
            return fail(format!("init_scale must be non-negative, got {}", self.init_scale));
        }
        if self.trace_thin == Some(0) {
            return fail("trace_thin must be at least 1".into());
        }
        if let Some(locs) = &self.init_locations {
            if locs.len() != self.num_chains {
                return fail(format!("{} initial locations given for {} chains", locs.len(), self.num_chains));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// MCSE and ESS cutoffs met after R̂ convergence.
    Mcse,
    /// Windowed ELBO means stopped changing.
    Delbo,
    /// R̂ converged but the iterates have a heavy tail.
    IterateKhat,
    /// `t_max` reached before R̂ convergence.
    MaxIterationsStationarity,
    /// `t_max` reached after R̂ convergence but before the MCSE and ESS cutoffs.
    MaxIterationsAveraging,
    /// `t_max` reached under the ΔELBO rule.
    MaxIterationsDelbo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhatCheck {
    pub iteration: usize,
    pub max_rhat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub lambda_bar: VariationalParams,
    pub lambda_last: Vec<VariationalParams>,
    pub t0: Option<usize>,
    pub t_stop: usize,
    pub rule_fired: StopReason,
    pub warned_nonconvergence: bool,
    /// Largest iterate tail index at the stationarity check; `None` when the window
    /// was too short to fit a tail.
    pub iterate_khat_max: Option<f64>,
    pub rhat_history: Vec<RhatCheck>,
    /// Number of iterates (over all chains) in `lambda_bar`.
    pub num_averaged: usize,
    /// First global iteration included in `lambda_bar`.
    pub average_from: usize,
    pub diagnostics: DiagnosticsReport,
    pub warnings: Vec<String>,
    /// ELBO estimate of every iteration, averaged over chains.
    #[serde(skip)]
    pub elbo_trace: Vec<f64>,
    /// Thinned iterates of the whole run when `trace_thin` is set.
    #[serde(skip)]
    pub trace: Option<IterateChains>,
}

struct ChainState {
    flat: Vec<f64>,
    optimizer: Optimizer,
    sampler: MinibatchSampler,
    rng: ChaCha8Rng,
}

struct Block {
    iterates: Vec<Vec<f64>>,
    elbo: Vec<f64>,
}

struct Runner<'a> {
    model: &'a dyn Model,
    kind: FamilyKind,
    config: &'a WorkflowConfig,
    states: Vec<ChainState>,
    t: usize,
    elbo: Vec<f64>,
    trace: Option<IterateChains>,
}

impl<'a> Runner<'a> {
    fn new(model: &'a dyn Model, kind: FamilyKind, config: &'a WorkflowConfig) -> Result<Self> {
        config.validate()?;
        let p = model.dim();
        let k = kind.num_params(p);
        let states = (0..config.num_chains)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(j as u64);
                let location: Vec<f64> = match &config.init_locations {
                    Some(locs) => {
                        Error::check_dim(p, locs[j].len())?;
                        locs[j].clone()
                    }
                    None => (0..p).map(|_| config.init_scale * rng.sample::<f64, _>(StandardNormal)).collect(),
                };
                let mut flat = location;
                flat.resize(k, 0.0);
                let optimizer = Optimizer::new(config.optimizer, config.eta, k)?.with_clip_norm(config.clip_norm)?;
                let sampler = MinibatchSampler::new(model.data_size(), config.minibatch)?;
                Ok(ChainState { flat, optimizer, sampler, rng })
            })
            .collect::<Result<Vec<_>>>()?;
        let trace = match config.trace_thin {
            Some(thin) => Some(IterateChains::new(config.num_chains, k, thin)?.with_stride(thin)?),
            None => None,
        };
        Ok(Self { model, kind, config, states, t: 0, elbo: Vec::new(), trace })
    }

    fn num_params(&self) -> usize {
        self.states[0].flat.len()
    }

    fn step_chain(&self, state: &mut ChainState, len: usize, j: usize) -> Result<Block> {
        let (model, kind, p) = (self.model, self.kind, self.model.dim());
        let mut block = Block { iterates: Vec::with_capacity(len), elbo: Vec::with_capacity(len) };
        for i in 0..len {
            let iteration = self.t + i + 1;
            let diverged = |reason: String| Error::Divergence { iteration, reason: format!("chain {j}: {reason}") };
            let params = VariationalParams::from_flat(kind, p, &state.flat).map_err(|e| diverged(e.to_string()))?;
            let ChainState { sampler, rng, optimizer, flat } = state;
            let batch = sampler.next_batch(rng);
            let est = estimate_grad(model, &params, self.config.num_draws, batch, rng)?;
            if !est.is_finite() {
                return Err(diverged(format!("non-finite ELBO estimate {}", est.value)));
            }
            optimizer.step(flat, &est.grad).map_err(|e| diverged(e.to_string()))?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(diverged("non-finite parameters after the update".into()));
            }
            block.iterates.push(flat.clone());
            block.elbo.push(est.value);
        }
        Ok(block)
    }

    /// Advances every chain by `len` iterations and appends the new iterates to `store`.
    fn advance(&mut self, len: usize, store: &mut IterateChains) -> Result<()> {
        let mut states = std::mem::take(&mut self.states);
        let blocks: Result<Vec<Block>> = {
            let this = &*self;
            states.par_iter_mut().enumerate().map(|(j, s)| this.step_chain(s, len, j)).collect()
        };
        self.states = states;
        let blocks = blocks?;
        let j_count = blocks.len() as f64;
        for i in 0..len {
            let iteration = self.t + i + 1;
            self.elbo.push(blocks.iter().map(|b| b.elbo[i]).sum::<f64>() / j_count);
            for (j, b) in blocks.iter().enumerate() {
                store.push(j, &b.iterates[i])?;
                if let Some(trace) = &mut self.trace {
                    if iteration % trace.stride() == 0 {
                        trace.push(j, &b.iterates[i])?;
                    }
                }
            }
        }
        self.t += len;
        Ok(())
    }

    fn last_params(&self) -> Result<Vec<VariationalParams>> {
        self.states.iter().map(|s| VariationalParams::from_flat(self.kind, self.model.dim(), &s.flat)).collect()
    }

    fn max_rhat(&self, chains: &IterateChains, window: usize) -> Result<f64> {
        let rhat = if self.config.rank_normalized_rhat {
            split_rhat_rank_normalized(chains, window)?
        } else {
            split_rhat(chains, window)?
        };
        Ok(rhat.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    fn finish(self, chains: &IterateChains, window: usize, outcome: Outcome) -> Result<RunResult> {
        let lambda_bar = iterate_average(chains, chains.iteration_of(chains.len() - window), self.kind)?;
        let report_window = window - window % 2;
        let diagnostics = compute_report(chains, report_window)?;
        Ok(RunResult {
            lambda_bar,
            lambda_last: self.last_params()?,
            t0: outcome.t0,
            t_stop: self.t,
            rule_fired: outcome.reason,
            warned_nonconvergence: outcome.warned,
            iterate_khat_max: outcome.khat,
            rhat_history: outcome.rhat_history,
            num_averaged: window * chains.num_chains(),
            average_from: chains.iteration_of(chains.len() - window),
            diagnostics,
            warnings: outcome.warnings,
            elbo_trace: self.elbo,
            trace: self.trace,
        })
    }
}

struct Outcome {
    t0: Option<usize>,
    reason: StopReason,
    warned: bool,
    khat: Option<f64>,
    rhat_history: Vec<RhatCheck>,
    warnings: Vec<String>,
}

/// Runs the configured workflow from fresh initializations.
///
/// Divergence of any chain aborts the run with [`Error::Divergence`].
pub fn run(model: &dyn Model, kind: FamilyKind, config: &WorkflowConfig) -> Result<RunResult> {
    let runner = Runner::new(model, kind, config)?;
    match config.stopping_rule {
        StoppingRule::Mcse => run_mcse(runner),
        StoppingRule::Delbo => run_delbo(runner),
    }
}

fn run_mcse(mut runner: Runner<'_>) -> Result<RunResult> {
    let cfg = runner.config;
    let w = cfg.window;
    let k = runner.num_params();
    let mut window = IterateChains::new(cfg.num_chains, k, 1)?;
    let mut history = Vec::new();
    let mut converged = false;
    while runner.t + w <= cfg.t_max {
        window.retain_tail(0);
        runner.advance(w, &mut window)?;
        let max_rhat = runner.max_rhat(&window, w)?;
        history.push(RhatCheck { iteration: runner.t, max_rhat });
        if max_rhat < cfg.rhat_cutoff {
            converged = true;
            break;
        }
    }
    let khat = if w >= 100 { Some(khat_iterates(&window, w)?.max) } else { None };
    let heavy_tail = khat.is_some_and(|k| k > KHAT_PROBLEM_THRESHOLD);
    if !converged || heavy_tail {
        let (reason, message) = if converged {
            (StopReason::IterateKhat, format!("iterate tail index {:.2} exceeds {KHAT_PROBLEM_THRESHOLD}", khat.unwrap_or(f64::NAN)))
        } else {
            let last = history.last().map_or(f64::NAN, |h| h.max_rhat);
            (StopReason::MaxIterationsStationarity, format!("max R̂ {last:.3} still ≥ {} after {} iterations", cfg.rhat_cutoff, runner.t))
        };
        let outcome = Outcome {
            t0: None,
            reason,
            warned: true,
            khat,
            rhat_history: history,
            warnings: vec![format!("optimization may not have converged: {message}")],
        };
        return runner.finish(&window, w, outcome);
    }

    let t0 = runner.t;
    let mut post = IterateChains::new(cfg.num_chains, k, t0 + 1)?;
    let mut stopped = false;
    while runner.t + w <= cfg.t_max {
        runner.advance(w, &mut post)?;
        if averaging_done(&post, cfg)? {
            stopped = true;
            break;
        }
    }
    if !stopped && runner.t < cfg.t_max {
        runner.advance(cfg.t_max - runner.t, &mut post)?;
    }
    let mut warnings = Vec::new();
    let reason = if stopped {
        StopReason::Mcse
    } else {
        warnings.push(format!("MCSE/ESS cutoffs not reached by t_max = {}", cfg.t_max));
        StopReason::MaxIterationsAveraging
    };
    let outcome = Outcome { t0: Some(t0), reason, warned: !stopped, khat, rhat_history: history, warnings };
    let n = post.len();
    runner.finish(&post, n, outcome)
}

/// Decides whether the post-stationarity average is precise enough.
///
/// Two exact shortcuts avoid the full autocorrelation computation on most checks:
/// the ESS of `n` draws never exceeds `n log₁₀ n`, which bounds every MCSE from
/// below, and under the minimum rule a single component with low ESS decides.
fn averaging_done(post: &IterateChains, cfg: &WorkflowConfig) -> Result<bool> {
    let n = post.len();
    if n < 4 {
        return Ok(false);
    }
    let nominal = (n * post.num_chains()) as f64;
    let var = pooled_variance(post, n)?;
    let bound: Vec<f64> = var.iter().map(|v| (v / (nominal * nominal.log10())).sqrt()).collect();
    if median(&bound) >= cfg.mcse_cutoff {
        return Ok(false);
    }
    if cfg.ess_aggregate == EssAggregate::Min {
        let k = post.num_params();
        let low = (0..k).any(|c| single_component_ess(post, c, n) <= cfg.ess_cutoff);
        if low {
            return Ok(false);
        }
    }
    let (ess, _) = ess_with_flags(post, n)?;
    let mcse: Vec<f64> = var.iter().zip(&ess).map(|(v, e)| if *v > 0.0 { (v / e).sqrt() } else { 0.0 }).collect();
    let ess_stat = match cfg.ess_aggregate {
        EssAggregate::Min => ess.iter().copied().fold(f64::INFINITY, f64::min),
        EssAggregate::Median => median(&ess),
    };
    Ok(median(&mcse) < cfg.mcse_cutoff && ess_stat > cfg.ess_cutoff)
}

fn single_component_ess(post: &IterateChains, k: usize, n: usize) -> f64 {
    let its: Vec<Vec<Vec<f64>>> = (0..post.num_chains())
        .map(|j| post.component_tail(j, k, n).into_iter().map(|v| vec![v]).collect())
        .collect();
    IterateChains::from_iterates(&its, 0)
        .and_then(|c| ess_with_flags(&c, n))
        .map(|(e, _)| e[0])
        .unwrap_or(f64::INFINITY)
}

fn run_delbo(mut runner: Runner<'_>) -> Result<RunResult> {
    let cfg = runner.config;
    let w = cfg.window;
    let mut window = IterateChains::new(cfg.num_chains, runner.num_params(), 1)?;
    let mut stopped = false;
    while runner.t + w <= cfg.t_max {
        window.retain_tail(0);
        runner.advance(w, &mut window)?;
        if delbo_rule(&runner.elbo, w, cfg.delbo_epsilon) {
            stopped = true;
            break;
        }
    }
    let khat = if w >= 100 { Some(khat_iterates(&window, w)?.max) } else { None };
    let (reason, warnings) = if stopped {
        (StopReason::Delbo, Vec::new())
    } else {
        (StopReason::MaxIterationsDelbo, vec![format!("ΔELBO rule did not trigger by t_max = {}", cfg.t_max)])
    };
    let outcome = Outcome { t0: None, reason, warned: !stopped, khat, rhat_history: Vec::new(), warnings };
    runner.finish(&window, w, outcome)
}

/// Mean of all stored iterates from global iteration `from` on, in unconstrained
/// coordinates.
pub fn iterate_average(chains: &IterateChains, from: usize, kind: FamilyKind) -> Result<VariationalParams> {
    let first = (0..chains.len()).find(|&t| chains.iteration_of(t) >= from);
    let Some(first) = first else {
        return Err(Error::invalid(format!("no stored iterates at or after iteration {from}")));
    };
    let dim = kind
        .dim_from_num_params(chains.num_params())
        .ok_or_else(|| Error::invalid(format!("{} parameters do not fit a {kind} family", chains.num_params())))?;
    let mean = chains.mean_tail(chains.len() - first)?;
    VariationalParams::from_flat(kind, dim, &mean)
}

/// Whether the ΔELBO rule fires on the last two windows of `trace`.
pub fn delbo_rule(trace: &[f64], window: usize, epsilon: f64) -> bool {
    if window == 0 || trace.len() < 2 * window {
        return false;
    }
    let n = trace.len();
    let now = trace[n - window..].iter().sum::<f64>() / window as f64;
    let prev = trace[n - 2 * window..n - window].iter().sum::<f64>() / window as f64;
    (now - prev).abs() / (prev.abs() + 1e-12) < epsilon
}

/// Monte Carlo means of `A = ‖λ − λ*‖²` for a draw `λ = λ* + αz` and of `Ā`, the
/// same distance for the average of `t` independent draws. `A` is averaged over every
/// draw of every replication.
pub fn ou_theory_check(alpha: f64, dim: usize, t: usize, replications: usize, seed: u64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) || dim == 0 || t == 0 || replications == 0 {
        return Err(Error::invalid("alpha, dimension, T and replications must all be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; dim];
    let (mut total_a, mut total_abar) = (0.0, 0.0);
    for _ in 0..replications {
        sum.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..t {
            for s in sum.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                total_a += alpha * alpha * z * z;
                *s += alpha * z;
            }
        }
        total_abar += sum.iter().map(|s| (s / t as f64).powi(2)).sum::<f64>();
    }
    let r = replications as f64;
    Ok((total_a / (r * t as f64), total_abar / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianMixture1D, GaussianTarget};

    #[test]
    fn config_validation() {
        assert!(WorkflowConfig::default().validate().is_ok());
        let bad = [
            WorkflowConfig { window: 7, ..Default::default() },
            WorkflowConfig { window: 2, ..Default::default() },
            WorkflowConfig { rhat_cutoff: 1.0, ..Default::default() },
            WorkflowConfig { mcse_cutoff: 0.0, ..Default::default() },
            WorkflowConfig { num_chains: 0, ..Default::default() },
            WorkflowConfig { t_max: 10, ..Default::default() },
            WorkflowConfig { init_locations: Some(vec![vec![0.0]]), num_chains: 2, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert_eq!("delbo".parse::<StoppingRule>().unwrap(), StoppingRule::Delbo);
        assert!("foo".parse::<StoppingRule>().is_err());
    }

    #[test]
    fn gaussian_target_converges_and_averages_to_the_mean() {
        let model = GaussianTarget::standard(3);
        let result = run(&model, FamilyKind::MeanField, &WorkflowConfig::default()).unwrap();
        assert!(!result.warned_nonconvergence, "{:?}", result.warnings);
        assert_eq!(result.rule_fired, StopReason::Mcse);
        let t0 = result.t0.unwrap();
        assert!(result.t_stop >= t0 + 100);
        let max_mcse = result.diagnostics.mcse.iter().copied().fold(0.0, f64::max);
        for m in result.lambda_bar.location() {
            assert!(m.abs() < 3.0 * max_mcse, "{m} vs {max_mcse}");
        }
        assert!(result.iterate_khat_max.unwrap() <= 1.0);
        assert_eq!(result.elbo_trace.len(), result.t_stop);
    }

    #[test]
    fn separated_chains_on_a_bimodal_target_warn() {
        let model = GaussianMixture1D::bimodal();
        let cfg = WorkflowConfig {
            num_chains: 2,
            t_max: 5000,
            init_locations: Some(vec![vec![-3.0], vec![3.0]]),
            ..Default::default()
        };
        let result = run(&model, FamilyKind::MeanField, &cfg).unwrap();
        assert!(result.warned_nonconvergence);
        assert_eq!(result.rule_fired, StopReason::MaxIterationsStationarity);
        assert!(result.rhat_history.iter().all(|h| h.max_rhat >= 1.1));
        assert_eq!(result.num_averaged, 200);
    }

    #[test]
    fn single_chain_small_window_completes() {
        let model = GaussianTarget::standard(2);
        let cfg = WorkflowConfig { window: 20, t_max: 2000, ..Default::default() };
        let result = run(&model, FamilyKind::FullRank, &cfg).unwrap();
        assert!(result.t_stop <= 2000);
        assert!(result.iterate_khat_max.is_none());
        assert!(result.rhat_history.iter().all(|h| h.max_rhat.is_finite()));
    }

    #[test]
    fn runs_are_deterministic_and_average_matches_trace() {
        let model = GaussianTarget::standard(2);
        let cfg = WorkflowConfig { num_chains: 2, trace_thin: Some(1), seed: 9, ..Default::default() };
        let a = run(&model, FamilyKind::FullRank, &cfg).unwrap();
        let b = run(&model, FamilyKind::FullRank, &cfg).unwrap();
        assert_eq!(a.lambda_bar, b.lambda_bar);
        assert_eq!(a.elbo_trace, b.elbo_trace);
        let trace = a.trace.unwrap();
        assert_eq!(trace.len(), a.t_stop);
        let recomputed = iterate_average(&trace, a.average_from, FamilyKind::FullRank).unwrap();
        for (x, y) in recomputed.to_flat().iter().zip(a.lambda_bar.to_flat()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn delbo_run_stops_early() {
        let model = GaussianTarget::isotropic(vec![1.0, -1.0], 0.5).unwrap();
        let cfg = WorkflowConfig { stopping_rule: StoppingRule::Delbo, ..Default::default() };
        let result = run(&model, FamilyKind::MeanField, &cfg).unwrap();
        assert_eq!(result.rule_fired, StopReason::Delbo);
        assert_eq!(result.t_stop % 100, 0);
        assert!(result.t_stop >= 200);
    }

    #[test]
    fn iterate_average_examples() {
        let c = IterateChains::from_iterates(&[vec![vec![0.0, 2.0], vec![2.0, 0.0]]], 1).unwrap();
        let avg = iterate_average(&c, 1, FamilyKind::MeanField).unwrap();
        assert_eq!(avg.to_flat(), vec![1.0, 1.0]);
        let last = iterate_average(&c, 2, FamilyKind::MeanField).unwrap();
        assert_eq!(last.to_flat(), vec![2.0, 0.0]);
        assert!(iterate_average(&c, 3, FamilyKind::MeanField).is_err());
        let odd = IterateChains::from_iterates(&[vec![vec![0.0; 3]]], 1).unwrap();
        assert!(iterate_average(&odd, 1, FamilyKind::MeanField).is_err());
    }

    #[test]
    fn delbo_rule_examples() {
        assert!(delbo_rule(&[5.0; 20], 10, 0.01));
        assert!(!delbo_rule(&[5.0; 19], 10, 0.01));
        // window means of a line with slope s differ by window·s
        let line = |s: f64| (0..200).map(|i| 100.0 + s * i as f64).collect::<Vec<_>>();
        assert!(delbo_rule(&line(0.009), 100, 0.01));
        assert!(!delbo_rule(&line(0.011), 100, 0.01));
    }

    #[test]
    fn noisy_trace_rarely_stops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut stops = 0;
        for _ in 0..500 {
            let trace: Vec<f64> = (0..200).map(|_| -100.0 + 200.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            stops += usize::from(delbo_rule(&trace, 100, 0.01));
        }
        assert!(stops < 30, "{stops}");
    }

    #[test]
    fn ou_scaling() {
        let (a, abar) = ou_theory_check(1.0, 1, 1, 20_000, 1).unwrap();
        assert!((a - 1.0).abs() < 0.05 && (abar - a).abs() < 1e-12);
        let (a, abar) = ou_theory_check(0.1, 10, 100, 1000, 2).unwrap();
        assert!((a - 0.1).abs() < 0.01);
        assert!((abar - 0.001).abs() < 0.05 * 0.001 * 3.0);
        assert!(ou_theory_check(0.0, 1, 1, 1, 0).is_err());
    }
}
