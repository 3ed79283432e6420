//! Comparison rules sharing the same posterior as TruVaR: GP-UCB, expected
//! improvement, straddle, maximum variance and GCHK.
//!
//! All of them sample a single noise level and break ties toward the lowest
//! domain index.

use std::f64::consts::PI;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::env::{Action, Environment};
use crate::error::{Error, Result};
use crate::gp::GpPosterior;
use crate::run::{argmax, Pick, Policy, PolicyStatus, RunLimits, StopReason};
use crate::sets::{confidence_bounds, SetState};

fn single_level(env: &Environment, name: &str) -> Result<()> {
    if env.num_levels() > 1 {
        return Err(Error::Config(format!(
            "{name} samples a fixed noise level; use Environment::fixed_level"
        )));
    }
    Ok(())
}

/// `2 log(|D| t^2 pi^2 / (6 delta)) / divisor`.
pub fn gp_ucb_beta(delta: f64, domain_size: usize, t: usize, divisor: f64) -> f64 {
    let t = t as f64;
    2.0 * (domain_size as f64 * t * t * PI * PI / (6.0 * delta)).ln() / divisor
}

/// `argmax mu + beta^{1/2} sigma`.
pub fn gp_ucb_select(posterior: &GpPosterior, beta: f64) -> (usize, f64) {
    let scale = beta.sqrt();
    let n = posterior.domain().len();
    argmax((0..n).map(|i| (i, posterior.mean(i) + scale * posterior.std_dev(i)))).expect("non-empty domain")
}

/// Closed-form expected improvement over `xi`.
pub fn expected_improvement(mean: f64, std_dev: f64, xi: f64) -> f64 {
    let diff = mean - xi;
    if std_dev <= 0.0 {
        return diff.max(0.0);
    }
    let z = diff / std_dev;
    let n = Normal::standard();
    (diff * n.cdf(z) + std_dev * n.pdf(z)).max(diff.max(0.0))
}

pub fn ei_select(posterior: &GpPosterior, xi: f64) -> (usize, f64) {
    let n = posterior.domain().len();
    argmax((0..n).map(|i| (i, expected_improvement(posterior.mean(i), posterior.std_dev(i), xi))))
        .expect("non-empty domain")
}

/// `1.96 sigma - |mu - h|`.
pub fn straddle_score(mean: f64, std_dev: f64, threshold: f64) -> f64 {
    1.96 * std_dev - (mean - threshold).abs()
}

pub fn straddle_select(posterior: &GpPosterior, threshold: f64) -> (usize, f64) {
    let n = posterior.domain().len();
    argmax((0..n).map(|i| (i, straddle_score(posterior.mean(i), posterior.std_dev(i), threshold))))
        .expect("non-empty domain")
}

pub fn var_select(posterior: &GpPosterior) -> (usize, f64) {
    let n = posterior.domain().len();
    argmax((0..n).map(|i| (i, posterior.variance(i)))).expect("non-empty domain")
}

/// `min{u - h, h - l}`.
pub fn ambiguity(lower: f64, upper: f64, threshold: f64) -> f64 {
    (upper - threshold).min(threshold - lower)
}

/// Most ambiguous point of `active`, or `None` when it is empty.
pub fn gchk_select(
    posterior: &GpPosterior,
    active: &[usize],
    threshold: f64,
    beta_sqrt: f64,
) -> Option<(usize, f64)> {
    argmax(active.iter().map(|&i| {
        let mu = posterior.mean(i);
        let w = beta_sqrt * posterior.std_dev(i);
        (i, ambiguity(mu - w, mu + w, threshold))
    }))
}

#[derive(Debug, Clone)]
pub struct GpUcb {
    pub delta: f64,
    pub divisor: f64,
    beta: f64,
}

impl GpUcb {
    pub fn new(delta: f64, divisor: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(divisor > 0.0) {
            return Err(Error::Config(format!("divisor must be positive, got {divisor}")));
        }
        Ok(Self {
            delta,
            divisor,
            beta: f64::NAN,
        })
    }
}

impl Policy for GpUcb {
    fn name(&self) -> String {
        "gp_ucb".into()
    }

    fn start(&mut self, env: &Environment, _: &GpPosterior, _: &RunLimits) -> Result<()> {
        single_level(env, "gp_ucb")?;
        self.beta = gp_ucb_beta(self.delta, env.len(), 1, self.divisor);
        Ok(())
    }

    fn select(&mut self, env: &Environment, posterior: &GpPosterior, _: Option<usize>) -> Result<Vec<Pick>> {
        self.beta = gp_ucb_beta(self.delta, env.len(), posterior.len() + 1, self.divisor);
        let (i, s) = gp_ucb_select(posterior, self.beta);
        Ok(vec![Pick::scored(Action::at(i), s)])
    }

    fn update(&mut self, _: &Environment, _: &GpPosterior) -> Result<()> {
        Ok(())
    }

    fn status(&self) -> Option<PolicyStatus> {
        Some(PolicyStatus {
            epoch: 1,
            eta: f64::NAN,
            beta: self.beta,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExpectedImprovement {
    /// Use the best posterior mean instead of the best observation.
    pub use_posterior_mean: bool,
}

impl ExpectedImprovement {
    /// Incumbent value; before any observation it is the best prior mean.
    pub fn incumbent(&self, posterior: &GpPosterior) -> f64 {
        let best_mean = || posterior.means().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if posterior.is_empty() || self.use_posterior_mean {
            return best_mean();
        }
        posterior
            .history()
            .iter()
            .map(|o| o.value)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Policy for ExpectedImprovement {
    fn name(&self) -> String {
        "ei".into()
    }

    fn start(&mut self, env: &Environment, _: &GpPosterior, _: &RunLimits) -> Result<()> {
        single_level(env, "ei")
    }

    fn select(&mut self, _: &Environment, posterior: &GpPosterior, _: Option<usize>) -> Result<Vec<Pick>> {
        let (i, s) = ei_select(posterior, self.incumbent(posterior));
        Ok(vec![Pick::scored(Action::at(i), s)])
    }

    fn update(&mut self, _: &Environment, _: &GpPosterior) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Straddle {
    pub threshold: f64,
}

impl Policy for Straddle {
    fn name(&self) -> String {
        "straddle".into()
    }

    fn start(&mut self, env: &Environment, _: &GpPosterior, _: &RunLimits) -> Result<()> {
        single_level(env, "straddle")
    }

    fn select(&mut self, _: &Environment, posterior: &GpPosterior, _: Option<usize>) -> Result<Vec<Pick>> {
        let (i, s) = straddle_select(posterior, self.threshold);
        Ok(vec![Pick::scored(Action::at(i), s)])
    }

    fn update(&mut self, _: &Environment, _: &GpPosterior) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaxVariance;

impl Policy for MaxVariance {
    fn name(&self) -> String {
        "var".into()
    }

    fn start(&mut self, env: &Environment, _: &GpPosterior, _: &RunLimits) -> Result<()> {
        single_level(env, "var")
    }

    fn select(&mut self, _: &Environment, posterior: &GpPosterior, _: Option<usize>) -> Result<Vec<Pick>> {
        let (i, s) = var_select(posterior);
        Ok(vec![Pick::scored(Action::at(i), s)])
    }

    fn update(&mut self, _: &Environment, _: &GpPosterior) -> Result<()> {
        Ok(())
    }
}

/// Ambiguity sampling over the unclassified set with a constant confidence
/// scale and monotone classification.
#[derive(Debug, Clone)]
pub struct Gchk {
    pub threshold: f64,
    pub beta_sqrt: f64,
    sets: SetState,
}

impl Gchk {
    pub fn new(threshold: f64, beta_sqrt: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        if !(beta_sqrt > 0.0 && beta_sqrt.is_finite()) {
            return Err(Error::Config(format!("beta_sqrt must be positive, got {beta_sqrt}")));
        }
        Ok(Self {
            threshold,
            beta_sqrt,
            sets: SetState::new(0),
        })
    }
}

impl Policy for Gchk {
    fn name(&self) -> String {
        "gchk".into()
    }

    fn start(&mut self, env: &Environment, posterior: &GpPosterior, _: &RunLimits) -> Result<()> {
        single_level(env, "gchk")?;
        self.sets = SetState::new(env.len());
        self.update(env, posterior)
    }

    fn select(&mut self, _: &Environment, posterior: &GpPosterior, _: Option<usize>) -> Result<Vec<Pick>> {
        Ok(gchk_select(posterior, self.sets.active(), self.threshold, self.beta_sqrt)
            .map(|(i, s)| vec![Pick::scored(Action::at(i), s)])
            .unwrap_or_default())
    }

    fn update(&mut self, _: &Environment, posterior: &GpPosterior) -> Result<()> {
        let (lower, upper) = confidence_bounds(posterior, self.beta_sqrt * self.beta_sqrt);
        self.sets.update_lse(&lower, &upper, self.threshold, true);
        Ok(())
    }

    fn sets(&self) -> Option<&SetState> {
        Some(&self.sets)
    }

    fn status(&self) -> Option<PolicyStatus> {
        Some(PolicyStatus {
            epoch: 1,
            eta: f64::NAN,
            beta: self.beta_sqrt * self.beta_sqrt,
        })
    }

    fn finished(&self) -> Option<StopReason> {
        self.sets.is_resolved().then_some(StopReason::Resolved)
    }
}
