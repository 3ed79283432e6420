//! TruVaR: truncated variance reduction.
//!
//! Each step picks the action that most reduces the sum over `M_{t-1}` of the
//! truncated variances `max{beta sigma^2, eta^2}` per unit cost. Epochs end
//! once every point of `M_t` has confidence width `beta^{1/2} sigma` at most
//! `(1 + delta_bar) eta`, after which the target `eta` shrinks by `r`.

use crate::env::{Action, Environment};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, NOISE_FLOOR};
use crate::run::{Pick, Policy, PolicyStatus, RunLimits, StopReason};
use crate::sets::{confidence_bounds, SetState};
use crate::theory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Bayesian optimization: `M_t` holds potential maximizers.
    Bo,
    /// Level-set estimation against a fixed threshold.
    Lse { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaRule {
    /// `a log(|D| t_i^2)` with `t_i` the epoch start time.
    Practical { a: f64 },
    /// Union-bound choice for confidence level `1 - delta`, evaluated at the
    /// run's cost horizon.
    Theoretical { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruVarConfig {
    pub mode: Mode,
    pub eta_initial: f64,
    pub ratio: f64,
    pub delta_bar: f64,
    pub beta_rule: BetaRule,
    /// Only consider actions at points of `M_{t-1}`.
    pub restrict_to_active: bool,
    /// `M_t` shrinks and `H_t`, `L_t` grow; otherwise sets are recomputed
    /// from the whole domain each step.
    pub monotone: bool,
    pub batch_size: usize,
    /// Untruncated variance reduction (`eta = 0`, no epochs).
    pub pure_variance_reduction: bool,
    /// Runs stop once the epoch target drops below this.
    pub eta_floor: f64,
}

impl TruVarConfig {
    /// Defaults for optimization: `a = 0.5`, `eta_1 = 1`, `r = 0.1`,
    /// `delta_bar = 0`.
    pub fn bo() -> Self {
        Self {
            mode: Mode::Bo,
            eta_initial: 1.0,
            ratio: 0.1,
            delta_bar: 0.0,
            beta_rule: BetaRule::Practical { a: 0.5 },
            restrict_to_active: false,
            monotone: true,
            batch_size: 1,
            pure_variance_reduction: false,
            eta_floor: 1e-8,
        }
    }

    /// Defaults for level-set estimation: as [`bo`](Self::bo) with `a = 1`.
    pub fn lse(threshold: f64) -> Self {
        Self {
            mode: Mode::Lse { threshold },
            beta_rule: BetaRule::Practical { a: 1.0 },
            ..Self::bo()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Mode::Lse { threshold } = self.mode {
            if !threshold.is_finite() {
                return Err(Error::Config("threshold must be finite".into()));
            }
        }
        if !self.pure_variance_reduction {
            if !(self.eta_initial > 0.0 && self.eta_initial.is_finite()) {
                return Err(Error::Config(format!(
                    "eta_initial must be positive, got {}",
                    self.eta_initial
                )));
            }
            if !(self.ratio > 0.0 && self.ratio < 1.0) {
                return Err(Error::Config(format!("ratio must lie in (0, 1), got {}", self.ratio)));
            }
        }
        if !(self.delta_bar >= 0.0 && self.delta_bar.is_finite()) {
            return Err(Error::Config(format!(
                "delta_bar must be non-negative, got {}",
                self.delta_bar
            )));
        }
        match self.beta_rule {
            BetaRule::Practical { a } if !(a > 0.0 && a.is_finite()) => {
                return Err(Error::Config(format!("beta scale a must be positive, got {a}")));
            }
            BetaRule::Theoretical { delta } if !(delta > 0.0 && delta < 1.0) => {
                return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.eta_floor >= 0.0) {
            return Err(Error::Config("eta_floor must be non-negative".into()));
        }
        Ok(())
    }

    /// `eta_1 r^{i-1}`, or 0 in pure variance-reduction mode.
    pub fn eta(&self, epoch: usize) -> f64 {
        if self.pure_variance_reduction {
            0.0
        } else {
            self.eta_initial * self.ratio.powi(epoch as i32 - 1)
        }
    }
}

/// `a log(|D| t_i^2)`.
pub fn beta_practical(a: f64, domain_size: usize, epoch_start: usize) -> f64 {
    let t = epoch_start as f64;
    a * (domain_size as f64 * t * t).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruVarState {
    pub epoch: usize,
    pub eta: f64,
    pub beta: f64,
    /// Observation count at which the current epoch started, plus one.
    pub epoch_start: usize,
    pub sets: SetState,
    pub finished: Option<StopReason>,
}

impl TruVarState {
    pub fn status(&self) -> PolicyStatus {
        PolicyStatus {
            epoch: self.epoch,
            eta: self.eta,
            beta: self.beta,
        }
    }
}

/// Variance reductions over the targets for one candidate observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    /// `sum max{beta s2, eta2} - max{beta s2_after, eta2}`.
    pub truncated: f64,
    /// `sum beta (s2 - s2_after)`.
    pub untruncated: f64,
}

/// Gains of observing `point` with noise variance `noise_var`.
pub fn gains(
    posterior: &GpPosterior,
    targets: &[usize],
    beta: f64,
    eta: f64,
    point: usize,
    noise_var: f64,
) -> Gains {
    let eta2 = eta * eta;
    let s = posterior.variance(point) + noise_var.max(NOISE_FLOOR);
    let col = posterior.cov_column(point);
    let mut truncated = 0.0;
    let mut untruncated = 0.0;
    for &m in targets {
        let before = posterior.variance(m);
        let c = col[m];
        let after = (before - c * c / s).max(0.0);
        truncated += (beta * before).max(eta2) - (beta * after).max(eta2);
        untruncated += beta * (before - after);
    }
    Gains {
        truncated,
        untruncated,
    }
}

/// Truncated variance reduction over `M_{t-1}` per unit cost.
pub fn acquisition(
    posterior: &GpPosterior,
    state: &TruVarState,
    env: &Environment,
    previous: Option<usize>,
    action: Action,
) -> Result<f64> {
    env.check_action(action)?;
    let cost = env.cost(previous, action);
    if !(cost > 0.0) {
        return Err(Error::Config(format!("non-positive cost {cost} for {action:?}")));
    }
    let g = gains(
        posterior,
        state.sets.active(),
        state.beta,
        state.eta,
        action.point,
        env.declared_noise_var(action),
    );
    Ok(g.truncated / cost)
}

#[derive(Debug, Clone)]
pub struct TruVar {
    config: TruVarConfig,
    state: Option<TruVarState>,
    theoretical_beta: Option<f64>,
}

impl TruVar {
    pub fn new(config: TruVarConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            theoretical_beta: None,
        })
    }

    pub fn config(&self) -> &TruVarConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&TruVarState> {
        self.state.as_ref()
    }

    fn state_ref(&self) -> Result<&TruVarState> {
        self.state
            .as_ref()
            .ok_or_else(|| Error::Config("policy used before start".into()))
    }

    fn beta_at(&self, num_actions: usize, epoch_start: usize) -> f64 {
        match (self.config.beta_rule, self.theoretical_beta) {
            (BetaRule::Practical { a }, _) => beta_practical(a, num_actions, epoch_start),
            (BetaRule::Theoretical { .. }, Some(b)) => b,
            (BetaRule::Theoretical { .. }, None) => unreachable!("set in start"),
        }
    }

    /// Greedy selection of up to `batch_size` actions; after each pick the
    /// posterior variances are updated as if it had been observed.
    pub fn select_batch(
        &self,
        env: &Environment,
        posterior: &GpPosterior,
        previous: Option<usize>,
    ) -> Result<Vec<Pick>> {
        let state = self.state_ref()?;
        let targets = state.sets.active();
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let candidates: Vec<usize> = if self.config.restrict_to_active {
            targets.to_vec()
        } else {
            (0..env.len()).collect()
        };
        let levels = env.num_levels();
        let mut picks = Vec::with_capacity(self.config.batch_size);
        let mut working: Option<GpPosterior> = None;
        let mut prev = previous;
        for _ in 0..self.config.batch_size {
            let post = working.as_ref().unwrap_or(posterior);
            let mut best: Option<(Action, f64, Gains)> = None;
            let scored = candidates.iter().flat_map(|&point| {
                (0..levels).map(move |level| Action { point, level })
            });
            for action in scored {
                let cost = env.cost(prev, action);
                let g = gains(
                    post,
                    targets,
                    state.beta,
                    state.eta,
                    action.point,
                    env.declared_noise_var(action),
                );
                let score = g.truncated / cost;
                if best.is_none_or(|(_, b, _)| score > b) {
                    best = Some((action, score, g));
                }
            }
            let Some((action, score, g)) = best else { break };
            picks.push(Pick {
                action,
                score,
                truncated_gain: Some(g.truncated),
                untruncated_gain: Some(g.untruncated),
            });
            if picks.len() < self.config.batch_size {
                let w = working.get_or_insert_with(|| posterior.clone());
                w.push_pending(action.point, env.declared_noise_var(action))?;
            }
            prev = Some(action.point);
        }
        Ok(picks)
    }

    /// Recomputes `M_t` (and `H_t`, `L_t`) from the current bounds.
    pub fn update_sets(&mut self, posterior: &GpPosterior) -> Result<()> {
        let mode = self.config.mode;
        let monotone = self.config.monotone;
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Config("policy used before start".into()))?;
        let (lower, upper) = confidence_bounds(posterior, state.beta);
        match mode {
            Mode::Bo => state.sets.update_bo(&lower, &upper, monotone),
            Mode::Lse { threshold } => state.sets.update_lse(&lower, &upper, threshold, monotone),
        }
        Ok(())
    }

    /// Advances epochs while every point of `M_t` meets the current target.
    /// Returns the number of advances.
    pub fn maybe_advance_epoch(&mut self, env: &Environment, posterior: &GpPosterior) -> Result<usize> {
        let num_actions = env.num_actions();
        let t = posterior.len();
        let mut advanced = 0;
        loop {
            let state = self.state_ref()?;
            if state.finished.is_some() {
                break;
            }
            let active = state.sets.active();
            if active.is_empty() {
                let next = self.advanced_state(num_actions, t);
                let state = self.state.as_mut().expect("checked");
                *state = next;
                state.finished = Some(StopReason::Resolved);
                advanced += 1;
                break;
            }
            let width = active
                .iter()
                .map(|&i| posterior.std_dev(i))
                .fold(0.0, f64::max)
                * state.beta.sqrt();
            if !(width <= (1.0 + self.config.delta_bar) * state.eta) {
                break;
            }
            if self.config.pure_variance_reduction {
                self.state.as_mut().expect("checked").finished = Some(StopReason::Converged);
                break;
            }
            let next = self.advanced_state(num_actions, t);
            let state = self.state.as_mut().expect("checked");
            *state = next;
            advanced += 1;
            if state.eta < self.config.eta_floor {
                state.finished = Some(StopReason::EtaFloor);
                break;
            }
        }
        Ok(advanced)
    }

    fn advanced_state(&self, num_actions: usize, t: usize) -> TruVarState {
        let state = self.state.as_ref().expect("started");
        let epoch = state.epoch + 1;
        let epoch_start = t + 1;
        TruVarState {
            epoch,
            eta: self.config.eta(epoch),
            beta: self.beta_at(num_actions, epoch_start),
            epoch_start,
            sets: state.sets.clone(),
            finished: None,
        }
    }
}

impl Policy for TruVar {
    fn name(&self) -> String {
        "truvar".into()
    }

    fn start(&mut self, env: &Environment, posterior: &GpPosterior, limits: &RunLimits) -> Result<()> {
        if posterior.len() != 0 {
            log::debug!("truvar started on a non-empty posterior");
        }
        let num_actions = env.num_actions();
        self.theoretical_beta = match self.config.beta_rule {
            BetaRule::Theoretical { delta } => {
                let horizon = limits.horizon_cost(env.max_cost()).ok_or_else(|| {
                    Error::Config("theoretical beta needs a finite budget or step limit".into())
                })?;
                Some(theory::beta_cost(delta, num_actions, horizon, env.min_cost())?)
            }
            BetaRule::Practical { .. } => None,
        };
        let epoch_start = posterior.len() + 1;
        self.state = Some(TruVarState {
            epoch: 1,
            eta: self.config.eta(1),
            beta: self.beta_at(num_actions, epoch_start),
            epoch_start,
            sets: SetState::new(env.len()),
            finished: None,
        });
        Ok(())
    }

    fn select(
        &mut self,
        env: &Environment,
        posterior: &GpPosterior,
        previous: Option<usize>,
    ) -> Result<Vec<Pick>> {
        self.select_batch(env, posterior, previous)
    }

    fn update(&mut self, env: &Environment, posterior: &GpPosterior) -> Result<()> {
        self.update_sets(posterior)?;
        self.maybe_advance_epoch(env, posterior)?;
        Ok(())
    }

    fn sets(&self) -> Option<&SetState> {
        self.state.as_ref().map(|s| &s.sets)
    }

    fn status(&self) -> Option<PolicyStatus> {
        self.state.as_ref().map(TruVarState::status)
    }

    fn finished(&self) -> Option<StopReason> {
        self.state.as_ref().and_then(|s| s.finished)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::kernel::Kernel;
    use crate::run::run;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn line_env(n: usize, truth: Vec<f64>) -> Environment {
        let d = Arc::new(Domain::unit_grid(n, 1).unwrap());
        Environment::new(d, truth).unwrap()
    }

    #[test]
    fn beta_practical_values() {
        assert_abs_diff_eq!(beta_practical(0.5, 2500, 1), 0.5 * 2500f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(beta_practical(0.5, 2500, 1), 3.9120, epsilon = 1e-4);
        assert_abs_diff_eq!(beta_practical(1.0, 2500, 10), 12.4292, epsilon = 1e-4);
    }

    #[test]
    fn eta_schedule_is_geometric() {
        let c = TruVarConfig::bo();
        assert_eq!(c.eta(1), 1.0);
        assert_abs_diff_eq!(c.eta(3), 0.01, epsilon = 1e-17);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TruVarConfig::bo();
        c.ratio = 1.0;
        assert!(c.validate().is_err());
        let mut c = TruVarConfig::bo();
        c.beta_rule = BetaRule::Practical { a: 0.0 };
        assert!(c.validate().is_err());
        let mut c = TruVarConfig::bo();
        c.delta_bar = -0.1;
        assert!(c.validate().is_err());
        let mut c = TruVarConfig::bo();
        c.pure_variance_reduction = true;
        c.ratio = 1.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn noiseless_two_point_lse_resolves() {
        // uncorrelated points: each observation classifies only itself
        let d = Arc::new(Domain::from_points(&[vec![0.0], vec![10.0]]).unwrap());
        let env = Environment::new(d, vec![1.0, -1.0])
            .unwrap()
            .with_noise(crate::env::NoiseModel::Constant(0.0))
            .unwrap();
        let k = Kernel::squared_exponential(0.1, 1).unwrap();
        let mut p = TruVar::new(TruVarConfig::lse(0.0)).unwrap();
        let trace = run(&env, &k, &mut p, &RunLimits::budget(10.0), 0).unwrap();
        assert_eq!(trace.stop, StopReason::Resolved);
        assert_eq!(trace.steps.len(), 2);
        let sets = trace.sets.unwrap();
        assert_eq!(sets.counts(), (0, 1, 1));
    }

    #[test]
    fn budget_below_first_cost_takes_no_steps() {
        let env = line_env(4, vec![0.0; 4]);
        let k = Kernel::squared_exponential(0.3, 1).unwrap();
        let mut p = TruVar::new(TruVarConfig::bo()).unwrap();
        let trace = run(&env, &k, &mut p, &RunLimits::budget(0.5), 0).unwrap();
        assert!(trace.steps.is_empty());
        assert_eq!(trace.stop, StopReason::Budget);
    }
}
