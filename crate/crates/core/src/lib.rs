//! Stochastic optimization for variational inference, treated as a Markov chain.
//!
//! The optimizer's iterates are monitored with split-R̂ to detect stationarity,
//! averaged once stationary, and stopped when the Monte Carlo standard error of the
//! average is small. Generalized-Pareto tail diagnostics screen both the iterate
//! process and the importance weights of the fitted Gaussian approximation.
//!
//! ```no_run
//! use robustvi::families::FamilyKind;
//! use robustvi::models::{linreg_generate, LinRegSpec};
//! use robustvi::workflow::{run, WorkflowConfig};
//!
//! let (model, _) = linreg_generate(&LinRegSpec::new(5, 0.5, 1)).unwrap();
//! let result = run(&model, FamilyKind::FullRank, &WorkflowConfig::default()).unwrap();
//! println!("stopped at {} ({:?})", result.t_stop, result.rule_fired);
//! ```

pub mod diagnostics;
pub mod error;
pub mod families;
pub mod gradients;
pub mod metrics;
pub mod models;
pub mod optimizers;
pub mod workflow;

pub use diagnostics::{DiagnosticsReport, IterateChains};
pub use error::{Error, Result};
pub use families::{FamilyKind, VariationalParams};
pub use gradients::ElboEstimate;
pub use metrics::MomentDistance;
pub use models::Model;
pub use optimizers::{Optimizer, OptimizerKind};
pub use workflow::{RunResult, StopReason, StoppingRule, WorkflowConfig};
