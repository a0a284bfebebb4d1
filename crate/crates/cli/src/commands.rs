//! The `run`, `compare` and `diagnose` commands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustvi::diagnostics::{compute_report, psis_khat, DiagnosticsReport};
use robustvi::metrics::{params_distance, reference_moments};
use robustvi::models::{
    linreg_generate, logistic_generate, logistic_model, Dataset, EightSchools, GaussianMixture1D, GaussianTarget,
    LinRegSpec, LinearRegression,
};
use robustvi::workflow::{run, RunResult, StoppingRule};
use robustvi::{FamilyKind, MomentDistance, Model, VariationalParams, WorkflowConfig};
use serde::Serialize;

use crate::config::{ExperimentConfig, ModelSpec};
use crate::output::{read_trace, write_elbo, write_table, write_trace, TableRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_WARNED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Stream offset separating importance-sampling draws from optimizer draws.
const PSIS_STREAM: u64 = 1 << 32;

pub fn build_model(spec: &ModelSpec) -> Result<Box<dyn Model>> {
    Ok(match spec {
        ModelSpec::LinReg { dim, n, noise_var, correlation, data_seed, data } => match data {
            Some(path) => Box::new(LinearRegression::new(Dataset::from_csv(path)?, *noise_var)?),
            None => {
                let spec = LinRegSpec { n: *n, noise_var: *noise_var, ..LinRegSpec::new(*dim, *correlation, *data_seed) };
                Box::new(linreg_generate(&spec)?.0)
            }
        },
        ModelSpec::Logistic { dim, n, data_seed, data } => {
            let dataset = match data {
                Some(path) => Dataset::from_csv(path)?,
                None => logistic_generate(*dim, *n, *data_seed)?,
            };
            Box::new(logistic_model(dataset)?)
        }
        ModelSpec::EightSchools { parameterization, data } => match data {
            Some(path) => Box::new(EightSchools::from_csv(path, *parameterization)?),
            None => Box::new(EightSchools::canonical(*parameterization)),
        },
        ModelSpec::Gaussian { dim } => Box::new(GaussianTarget::standard(*dim)),
        ModelSpec::Bimodal => Box::new(GaussianMixture1D::bimodal()),
    })
}

fn output_dir(cli_out: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli_out.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("robustvi-out"))
}

type Reference = (DVector<f64>, DMatrix<f64>);

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    model: &'a str,
    family: FamilyKind,
    num_params: usize,
    config: &'a WorkflowConfig,
    result: &'a RunResult,
    /// Tail index of the importance weights for the last iterate of chain 0 and for the average.
    psis_khat_last: f64,
    psis_khat_average: f64,
    distance_last: Option<MomentDistance>,
    distance_average: Option<MomentDistance>,
}

struct RunArtifacts {
    result: RunResult,
    row: TableRow,
}

fn execute(model: &dyn Model, cfg: &ExperimentConfig, workflow: &WorkflowConfig, reference: Option<&Reference>, out: &Path) -> Result<RunArtifacts> {
    let result = run(model, cfg.family, workflow)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    if let Some(trace) = &result.trace {
        write_trace(&out.join("trace.csv"), trace)?;
    }
    write_elbo(&out.join("elbo.csv"), &result.elbo_trace)?;

    let mut rng = ChaCha8Rng::seed_from_u64(workflow.seed);
    rng.set_stream(PSIS_STREAM);
    let last = &result.lambda_last[0];
    let khat_last = psis_khat(model, last, cfg.psis_draws, &mut rng)?;
    let khat_avg = psis_khat(model, &result.lambda_bar, cfg.psis_draws, &mut rng)?;
    let distance = |p: &VariationalParams| reference.map(|r| params_distance(p, r)).transpose();
    let (d_last, d_avg) = (distance(last)?, distance(&result.lambda_bar)?);

    let summary = RunSummary {
        model: model.name(),
        family: cfg.family,
        num_params: cfg.family.num_params(model.dim()),
        config: workflow,
        result: &result,
        psis_khat_last: khat_last,
        psis_khat_average: khat_avg,
        distance_last: d_last,
        distance_average: d_avg,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join("report.json"), json + "\n")?;

    let row = TableRow {
        seed: workflow.seed,
        k: summary.num_params,
        rule: workflow.stopping_rule.to_string(),
        epsilon: match workflow.stopping_rule {
            StoppingRule::Mcse => workflow.mcse_cutoff,
            StoppingRule::Delbo => workflow.delbo_epsilon,
        },
        t: result.t_stop,
        d_mu: d_last.map(|d| d.d_mu),
        d_mu_ia: d_avg.map(|d| d.d_mu),
        d_sigma: d_last.map(|d| d.d_sigma),
        d_sigma_ia: d_avg.map(|d| d.d_sigma),
        khat: khat_last,
        khat_ia: khat_avg,
    };
    write_table(&out.join("table.csv"), std::slice::from_ref(&row))?;
    Ok(RunArtifacts { result, row })
}

fn apply_seed(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.workflow.seed = s;
    }
}

pub fn cmd_run(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<i32> {
    let mut cfg = cfg.clone();
    apply_seed(&mut cfg, seed);
    let model = build_model(&cfg.model)?;
    let reference = reference_moments(model.as_ref(), cfg.reference.as_deref())?;
    let out = output_dir(out, &cfg);
    let art = execute(model.as_ref(), &cfg, &cfg.workflow, reference.as_ref(), &out)?;
    let r = &art.result;
    println!(
        "{}: stopped at T = {} ({:?}), T0 = {}, averaged {} iterates",
        model.name(),
        r.t_stop,
        r.rule_fired,
        r.t0.map_or("none".to_string(), |t| t.to_string()),
        r.num_averaged
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    println!("outputs written to {}", out.display());
    Ok(if r.warned_nonconvergence { EXIT_WARNED } else { EXIT_OK })
}

pub fn cmd_compare(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<i32> {
    let mut cfg = cfg.clone();
    apply_seed(&mut cfg, seed);
    let model = build_model(&cfg.model)?;
    let Some(reference) = reference_moments(model.as_ref(), cfg.reference.as_deref())? else {
        bail!("compare needs reference moments: the model has no closed-form posterior and model.reference is not set");
    };
    let out = output_dir(out, &cfg);
    let mut rows = Vec::new();
    for i in 0..cfg.compare_seeds {
        let seed = cfg.workflow.seed + i as u64;
        for rule in [StoppingRule::Delbo, StoppingRule::Mcse] {
            let workflow = WorkflowConfig { seed, stopping_rule: rule, ..cfg.workflow.clone() };
            let dir = out.join(format!("seed_{seed}")).join(rule.to_string());
            rows.push(execute(model.as_ref(), &cfg, &workflow, Some(&reference), &dir)?.row);
        }
    }
    write_table(&out.join("table.csv"), &rows)?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:>6} {:>6} {:>6} {:>8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7}", "seed", "K", "rule", "eps", "T", "D_mu", "D_mu(IA)", "D_Sig", "D_Sig(IA)", "khat", "khat(IA)");
    for r in &rows {
        println!(
            "{:>6} {:>6} {:>6} {:>8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>7.2} {:>7.2}",
            r.seed, r.k, r.rule, r.epsilon, r.t, opt(r.d_mu), opt(r.d_mu_ia), opt(r.d_sigma), opt(r.d_sigma_ia), r.khat, r.khat_ia
        );
    }
    println!("table written to {}", out.join("table.csv").display());
    Ok(EXIT_OK)
}

/// Threshold on the lag-one autocorrelation above which averaging is flagged as inefficient.
pub const HIGH_AUTOCORR: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub stationary: bool,
    pub heavy_tail: bool,
    pub high_autocorr: bool,
    pub message: String,
}

pub fn verdict(report: &DiagnosticsReport, rhat_cutoff: f64) -> Verdict {
    let stationary = report.max_rhat < rhat_cutoff;
    let heavy_tail = report.max_khat.is_some_and(|k| k > robustvi::diagnostics::KHAT_PROBLEM_THRESHOLD);
    let high_autocorr = report.max_lag_one_autocorr() > HIGH_AUTOCORR;
    let message = if !stationary {
        "not stationary (R̂ ≥ τ)".to_string()
    } else if heavy_tail {
        "converged, but iterates are heavy-tailed (k̂ > 1); averaging is unreliable".to_string()
    } else if high_autocorr {
        "converged, averaging inefficient".to_string()
    } else {
        "converged, averaging efficient".to_string()
    };
    Verdict { stationary, heavy_tail, high_autocorr, message }
}

pub fn cmd_diagnose(trace_path: &Path, window: Option<usize>, rhat_cutoff: f64) -> Result<i32> {
    let chains = read_trace(trace_path)?;
    let n = chains.len();
    let window = window.unwrap_or(n - n % 2);
    if window < 4 || window > n {
        bail!("{}: need a window of at least 4 of the {n} stored iterates per chain, got {window}", trace_path.display());
    }
    let report = compute_report(&chains, window)?;
    let v = verdict(&report, rhat_cutoff);
    println!("iterates per chain: {n}, chains: {}, components: {}, window: {window}", chains.num_chains(), chains.num_params());
    println!("max R̂ = {:.4} (τ = {rhat_cutoff})", report.max_rhat);
    println!("min ESS = {:.1}, median MCSE = {:.3e}", report.min_ess, report.median_mcse);
    match report.max_khat {
        Some(k) => println!("max iterate k̂ = {k:.3}"),
        None => println!("max iterate k̂ = n/a (window shorter than 100)"),
    }
    println!("max lag-1 autocorrelation = {:.4}", report.max_lag_one_autocorr());
    if v.high_autocorr {
        println!("warning: lag-1 autocorrelation exceeds {HIGH_AUTOCORR}; iterate averaging may not be reliable");
    }
    println!("verdict: {}", v.message);
    Ok(if v.stationary && !v.heavy_tail { EXIT_OK } else { EXIT_WARNED })
}
