//! Truncated variance reduction (TruVaR) for Gaussian-process Bayesian
//! optimization and level-set estimation over finite domains.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`], [`domain`] and [`gp`] hold the Gaussian-process machinery,
//!   including the one-step lookahead variances the acquisition rule needs.
//! * [`env`] describes ground-truth problem instances: synthetic GP draws,
//!   grid CSV files, noise models, cost models and multi-noise products.
//! * [`algorithm`] is TruVaR itself, [`baselines`] the comparison rules, and
//!   [`run`] the sequential sampling loop they all share.
//! * [`metrics`] and [`theory`] evaluate runs and the sample-complexity
//!   quantities (mutual information, covering costs, bound conditions).

pub mod algorithm;
pub mod baselines;
pub mod domain;
pub mod env;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod metrics;
pub mod rng;
pub mod run;
pub mod sets;
pub mod theory;

pub use algorithm::{BetaRule, Mode, TruVar, TruVarConfig, TruVarState};
pub use domain::Domain;
pub use env::{Action, CostModel, Environment, NoiseLevel, NoiseModel};
pub use error::{Error, Result};
pub use gp::GpPosterior;
pub use kernel::{Kernel, KernelFamily};
pub use run::{run, Policy, RunLimits, RunTrace, StepRecord, StopReason};
pub use sets::{Label, SetState};
