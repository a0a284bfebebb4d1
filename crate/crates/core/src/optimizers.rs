//! Constant-rate stochastic gradient ascent: `λ ← λ + η γₜ ĝₜ`.
//!
//! The per-coordinate rate `γₜ` is 1 for SGD and comes from the gradient
//! accumulators for Adagrad, RMSprop and Adam. There is no decay schedule.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const STABILIZER: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Rmsprop,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    eta: f64,
    /// Adagrad running sum, RMSprop EMA, or Adam second moment.
    second: Vec<f64>,
    /// Adam first moment.
    first: Vec<f64>,
    steps: u64,
    num_params: usize,
    clip_norm: Option<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, eta: f64, num_params: usize) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("base step size must be positive, got {eta}")));
        }
        if num_params == 0 {
            return Err(Error::invalid("optimizer needs at least one parameter"));
        }
        let first = if kind == OptimizerKind::Adam { vec![0.0; num_params] } else { Vec::new() };
        let second = if kind == OptimizerKind::Sgd { Vec::new() } else { vec![0.0; num_params] };
        Ok(Self { kind, eta, second, first, steps: 0, num_params, clip_norm: None })
    }

    /// Rescales any gradient whose Euclidean norm exceeds `max_norm`. Off by default
    /// since it biases the gradient estimator.
    pub fn with_clip_norm(mut self, max_norm: Option<f64>) -> Result<Self> {
        if let Some(c) = max_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip norm must be positive"));
            }
        }
        self.clip_norm = max_norm;
        Ok(self)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Applies one ascent step to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        Error::check_dim(self.num_params, params.len())?;
        Error::check_dim(self.num_params, grad.len())?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} is {}", grad[i])));
        }
        let clip = match self.clip_norm {
            Some(c) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.steps += 1;
        let eta = self.eta;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += eta * clip * g;
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, g), acc) in params.iter_mut().zip(grad).zip(&mut self.second) {
                    let g = clip * g;
                    *acc += g * g;
                    *p += eta * g / (*acc + STABILIZER).sqrt();
                }
            }
            OptimizerKind::Rmsprop => {
                for ((p, g), acc) in params.iter_mut().zip(grad).zip(&mut self.second) {
                    let g = clip * g;
                    *acc = RMSPROP_DECAY * *acc + (1.0 - RMSPROP_DECAY) * g * g;
                    *p += eta * g / (*acc + STABILIZER).sqrt();
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    let g = clip * g;
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p += eta * (*m / c1) / ((*v / c2).sqrt() + STABILIZER);
                }
            }
        }
        Ok(())
    }
}
