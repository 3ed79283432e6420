//! Experiment harness for the `truvar` library: configuration files, seeded
//! parallel runs with CSV traces, summaries, paired comparisons and the
//! bound calculator.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod trace;

use truvar::theory::{corollary_bounds, BoundReport};

pub use config::{AnyConfig, BoundsConfig, ExperimentConfig};
pub use error::{CliError, Result};

/// Evaluates the horizon bounds; deterministic, no randomness involved.
pub fn run_bounds(cfg: &BoundsConfig) -> Result<BoundReport> {
    Ok(corollary_bounds(&cfg.inputs())?)
}

/// Pretty JSON rendering of a bound report.
pub fn bounds_json(report: &BoundReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
