//! Flat `key = value` experiment configuration with dotted keys.
//!
//! ```text
//! # conjugate regression, 5 coefficients
//! model.kind = linreg
//! model.dim = 5
//! family = full_rank
//! workflow.minibatch = 50
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use robustvi::models::Parameterization;
use robustvi::{FamilyKind, WorkflowConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// Conjugate linear regression, generated or read from CSV.
    LinReg {
        dim: usize,
        n: usize,
        noise_var: f64,
        correlation: f64,
        data_seed: u64,
        data: Option<PathBuf>,
    },
    Logistic {
        dim: usize,
        n: usize,
        data_seed: u64,
        data: Option<PathBuf>,
    },
    EightSchools {
        parameterization: Parameterization,
        data: Option<PathBuf>,
    },
    /// Standard normal target of the given dimension.
    Gaussian { dim: usize },
    /// Equal mixture of N(−3, 0.5²) and N(3, 0.5²).
    Bimodal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub family: FamilyKind,
    pub workflow: WorkflowConfig,
    /// Reference moments file for models without closed-form posteriors.
    pub reference: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub trace_thin: usize,
    pub psis_draws: usize,
    pub compare_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Default)]
struct RawModel {
    kind: Option<(usize, String)>,
    dim: Option<usize>,
    n: Option<usize>,
    noise_var: Option<f64>,
    correlation: Option<f64>,
    data_seed: Option<u64>,
    data: Option<PathBuf>,
    parameterization: Option<Parameterization>,
}

fn parse_value<T: FromStr>(raw: &str, key: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| format!("invalid value '{raw}' for {key}: {e}"))
}

fn parse_optional<T: FromStr>(raw: &str, key: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    match raw {
        "none" | "" => Ok(None),
        _ => parse_value(raw, key).map(Some),
    }
}

fn parse_locations(raw: &str) -> Result<Vec<Vec<f64>>, String> {
    raw.split(';')
        .map(|chain| {
            chain
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("invalid initial location '{}': {e}", v.trim())))
                .collect()
        })
        .collect()
}

/// Parses configuration text; relative paths resolve against `base`.
pub fn parse(text: &str, source: &Path, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let err = |line: Option<usize>, message: String| ConfigError { path: source.to_path_buf(), line, message };
    let mut raw = RawModel::default();
    let mut cfg = ExperimentConfig {
        model: ModelSpec::Gaussian { dim: 1 },
        family: FamilyKind::FullRank,
        workflow: WorkflowConfig::default(),
        reference: None,
        output_dir: None,
        trace_thin: 1,
        psis_draws: 2000,
        compare_seeds: 1,
    };
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_relative() { base.join(p) } else { p }
    };

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(err(Some(lineno), format!("expected 'key = value', got '{content}'")));
        };
        let (key, value) = (key.trim(), value.trim());
        let w = &mut cfg.workflow;
        let result: Result<(), String> = (|| {
            match key {
                "model.kind" => raw.kind = Some((lineno, value.to_ascii_lowercase())),
                "model.dim" => raw.dim = Some(parse_value(value, key)?),
                "model.n" => raw.n = Some(parse_value(value, key)?),
                "model.noise_var" => raw.noise_var = Some(parse_value(value, key)?),
                "model.correlation" => raw.correlation = Some(parse_value(value, key)?),
                "model.data_seed" => raw.data_seed = Some(parse_value(value, key)?),
                "model.data" => raw.data = Some(resolve(value)),
                "model.parameterization" => raw.parameterization = Some(parse_value(value, key)?),
                "model.reference" => cfg.reference = Some(resolve(value)),
                "family" => cfg.family = parse_value(value, key)?,
                "workflow.eta" => w.eta = parse_value(value, key)?,
                "workflow.num_chains" => w.num_chains = parse_value(value, key)?,
                "workflow.window" => w.window = parse_value(value, key)?,
                "workflow.rhat_cutoff" => w.rhat_cutoff = parse_value(value, key)?,
                "workflow.mcse_cutoff" => w.mcse_cutoff = parse_value(value, key)?,
                "workflow.ess_cutoff" => w.ess_cutoff = parse_value(value, key)?,
                "workflow.t_max" => w.t_max = parse_value(value, key)?,
                "workflow.optimizer" => w.optimizer = parse_value(value, key)?,
                "workflow.num_draws" => w.num_draws = parse_value(value, key)?,
                "workflow.minibatch" => w.minibatch = parse_optional(value, key)?,
                "workflow.stopping_rule" => w.stopping_rule = parse_value(value, key)?,
                "workflow.delbo_epsilon" => w.delbo_epsilon = parse_value(value, key)?,
                "workflow.seed" => w.seed = parse_value(value, key)?,
                "workflow.init_scale" => w.init_scale = parse_value(value, key)?,
                "workflow.init_locations" => w.init_locations = Some(parse_locations(value)?),
                "workflow.clip_norm" => w.clip_norm = parse_optional(value, key)?,
                "workflow.ess_aggregate" => w.ess_aggregate = parse_value(value, key)?,
                "workflow.rank_normalized_rhat" => w.rank_normalized_rhat = parse_value(value, key)?,
                "output.dir" => cfg.output_dir = Some(resolve(value)),
                "output.trace_thin" => cfg.trace_thin = parse_value(value, key)?,
                "output.psis_draws" => cfg.psis_draws = parse_value(value, key)?,
                "compare.seeds" => cfg.compare_seeds = parse_value(value, key)?,
                _ => return Err(format!("unknown key '{key}'")),
            }
            Ok(())
        })();
        result.map_err(|m| err(Some(lineno), m))?;
    }

    let (kind_line, kind) = raw.kind.clone().ok_or_else(|| err(None, "missing required key 'model.kind'".into()))?;
    cfg.model = match kind.as_str() {
        "linreg" => ModelSpec::LinReg {
            dim: raw.dim.unwrap_or(5),
            n: raw.n.unwrap_or(300),
            noise_var: raw.noise_var.unwrap_or(0.4),
            correlation: raw.correlation.unwrap_or(0.5),
            data_seed: raw.data_seed.unwrap_or(0),
            data: raw.data.clone(),
        },
        "logistic" => ModelSpec::Logistic {
            dim: raw.dim.unwrap_or(5),
            n: raw.n.unwrap_or(300),
            data_seed: raw.data_seed.unwrap_or(0),
            data: raw.data.clone(),
        },
        "eight_schools" | "schools" => ModelSpec::EightSchools {
            parameterization: raw.parameterization.unwrap_or(Parameterization::NonCentered),
            data: raw.data.clone(),
        },
        "gaussian" => ModelSpec::Gaussian { dim: raw.dim.unwrap_or(2) },
        "bimodal" => ModelSpec::Bimodal,
        other => {
            return Err(err(
                Some(kind_line),
                format!("unknown model kind '{other}' (expected linreg, logistic, eight_schools, gaussian or bimodal)"),
            ))
        }
    };
    if cfg.trace_thin == 0 {
        return Err(err(None, "output.trace_thin must be at least 1".into()));
    }
    if cfg.compare_seeds == 0 {
        return Err(err(None, "compare.seeds must be at least 1".into()));
    }
    cfg.workflow.trace_thin = Some(cfg.trace_thin);
    cfg.workflow.validate().map_err(|e| err(None, e.to_string()))?;
    for p in [&raw.data, &cfg.reference].into_iter().flatten() {
        if !p.exists() {
            return Err(err(None, format!("referenced file {} does not exist", p.display())));
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: None,
        message: if e.kind() == std::io::ErrorKind::NotFound { "config not found".into() } else { e.to_string() },
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse(&text, path, base)
}
