//! The sequential sampling loop shared by TruVaR and the baselines.

use rand::Rng;
use serde::Serialize;

use crate::env::{Action, CostModel, Environment};
use crate::error::{Error, Result};
use crate::gp::GpPosterior;
use crate::kernel::Kernel;
use crate::rng::{stream, Stream};
use crate::sets::SetState;

/// Epoch bookkeeping reported by epoch-based policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyStatus {
    pub epoch: usize,
    pub eta: f64,
    pub beta: f64,
}

/// One selected action with its acquisition value. The gains are the
/// truncated and untruncated variance reductions before division by cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub action: Action,
    pub score: f64,
    pub truncated_gain: Option<f64>,
    pub untruncated_gain: Option<f64>,
}

impl Pick {
    pub fn scored(action: Action, score: f64) -> Self {
        Self {
            action,
            score,
            truncated_gain: None,
            untruncated_gain: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The next action would exceed the budget.
    Budget,
    MaxSteps,
    /// `M_t` became empty.
    Resolved,
    /// The epoch target fell below the configured floor.
    EtaFloor,
    /// The epoch target reached the requested accuracy.
    EtaTarget,
    /// Pure variance reduction with no variance left on `M_t`.
    Converged,
    /// The policy had no candidate to offer.
    NoCandidates,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Budget => "budget",
            StopReason::MaxSteps => "max_steps",
            StopReason::Resolved => "resolved",
            StopReason::EtaFloor => "eta_floor",
            StopReason::EtaTarget => "eta_target",
            StopReason::Converged => "converged",
            StopReason::NoCandidates => "no_candidates",
        }
    }
}

/// A sampling rule driven by [`run`].
pub trait Policy {
    fn name(&self) -> String;

    /// Resets internal state for a fresh run.
    fn start(&mut self, env: &Environment, posterior: &GpPosterior, limits: &RunLimits) -> Result<()>;

    /// Next action, or several for batch rules. Empty means nothing to do.
    fn select(
        &mut self,
        env: &Environment,
        posterior: &GpPosterior,
        previous: Option<usize>,
    ) -> Result<Vec<Pick>>;

    /// Called after the posterior absorbed the selected observations.
    fn update(&mut self, env: &Environment, posterior: &GpPosterior) -> Result<()>;

    fn sets(&self) -> Option<&SetState> {
        None
    }

    fn status(&self) -> Option<PolicyStatus> {
        None
    }

    /// Set once the policy has nothing left to do.
    fn finished(&self) -> Option<StopReason> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLimits {
    /// Total cost that may be spent; an action is taken only if it fits.
    pub budget: f64,
    pub max_steps: Option<usize>,
    /// Stop as soon as the epoch target is at most this value.
    pub eta_target: Option<f64>,
}

impl RunLimits {
    pub fn budget(budget: f64) -> Self {
        Self {
            budget,
            max_steps: None,
            eta_target: None,
        }
    }

    pub fn steps(max_steps: usize) -> Self {
        Self {
            budget: f64::INFINITY,
            max_steps: Some(max_steps),
            eta_target: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0) {
            return Err(Error::Config(format!("budget must be positive, got {}", self.budget)));
        }
        if self.budget.is_infinite() && self.max_steps.is_none() && self.eta_target.is_none() {
            return Err(Error::Config(
                "an unbounded budget needs max_steps or eta_target".into(),
            ));
        }
        Ok(())
    }

    /// Largest cost the run can accumulate.
    pub fn horizon_cost(&self, max_cost: f64) -> Option<f64> {
        let by_steps = self.max_steps.map(|s| s as f64 * max_cost);
        match (self.budget.is_finite(), by_steps) {
            (true, Some(b)) => Some(self.budget.min(b)),
            (true, None) => Some(self.budget),
            (false, b) => b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based observation counter.
    pub t: usize,
    pub point: usize,
    pub level: usize,
    pub cost: f64,
    pub cumulative_cost: f64,
    pub y: f64,
    pub m_size: usize,
    pub h_size: usize,
    pub l_size: usize,
    pub epoch: Option<usize>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub score: f64,
    pub truncated_gain: Option<f64>,
    pub untruncated_gain: Option<f64>,
}

/// State visible to run observers: at `t = 0` and after every update.
pub struct Snapshot<'a> {
    pub t: usize,
    pub cumulative_cost: f64,
    /// Every step taken so far.
    pub steps: &'a [StepRecord],
    pub posterior: &'a GpPosterior,
    pub sets: Option<&'a SetState>,
    pub status: Option<PolicyStatus>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub policy: String,
    pub seed: u64,
    pub start: Option<usize>,
    pub steps: Vec<StepRecord>,
    pub stop: StopReason,
    pub posterior: GpPosterior,
    pub sets: Option<SetState>,
    pub status: Option<PolicyStatus>,
}

impl RunTrace {
    pub fn total_cost(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_cost)
    }
}

/// Runs `policy` on `env` with the observation noise drawn from the seed's
/// observation stream. Travel-cost environments start from a point drawn
/// uniformly from the seed's start stream.
pub fn run(
    env: &Environment,
    kernel: &Kernel,
    policy: &mut dyn Policy,
    limits: &RunLimits,
    seed: u64,
) -> Result<RunTrace> {
    run_observed(env, kernel, policy, limits, seed, |_| Ok(()))
}

/// Start location for state-dependent costs.
pub fn start_point(env: &Environment, seed: u64) -> Option<usize> {
    match env.cost_model() {
        CostModel::Travel if env.levels().is_none() => {
            Some(stream(seed, Stream::Start).random_range(0..env.len()))
        }
        _ => None,
    }
}

/// [`run`] with a callback invoked on every [`Snapshot`].
pub fn run_observed<F>(
    env: &Environment,
    kernel: &Kernel,
    policy: &mut dyn Policy,
    limits: &RunLimits,
    seed: u64,
    mut observer: F,
) -> Result<RunTrace>
where
    F: FnMut(&Snapshot<'_>) -> Result<()>,
{
    limits.validate()?;
    let mut posterior = GpPosterior::prior(kernel.clone(), env.domain().clone())?;
    let mut rng = stream(seed, Stream::Observation);
    let start = start_point(env, seed);
    let mut previous = start;
    let mut cumulative = 0.0;
    let mut steps: Vec<StepRecord> = Vec::new();

    policy.start(env, &posterior, limits)?;
    observer(&Snapshot {
        t: 0,
        cumulative_cost: 0.0,
        steps: &steps,
        posterior: &posterior,
        sets: policy.sets(),
        status: policy.status(),
    })?;

    let stop = loop {
        if let Some(reason) = policy.finished() {
            break reason;
        }
        if limits.max_steps.is_some_and(|m| steps.len() >= m) {
            break StopReason::MaxSteps;
        }
        let status = policy.status();
        if let (Some(target), Some(st)) = (limits.eta_target, status) {
            if st.eta <= target {
                break StopReason::EtaTarget;
            }
        }
        let picks = policy.select(env, &posterior, previous)?;
        if picks.is_empty() {
            break StopReason::NoCandidates;
        }
        let first_new = steps.len();
        let mut out_of_budget = false;
        for pick in picks {
            if limits.max_steps.is_some_and(|m| steps.len() >= m) {
                break;
            }
            env.check_action(pick.action)?;
            let cost = env.cost(previous, pick.action);
            if cumulative + cost > limits.budget {
                out_of_budget = true;
                break;
            }
            let y = env.observe(pick.action, &mut rng)?;
            posterior.push(pick.action.point, y, env.declared_noise_var(pick.action))?;
            cumulative += cost;
            previous = Some(pick.action.point);
            steps.push(StepRecord {
                t: steps.len() + 1,
                point: pick.action.point,
                level: pick.action.level,
                cost,
                cumulative_cost: cumulative,
                y,
                m_size: 0,
                h_size: 0,
                l_size: 0,
                epoch: status.map(|s| s.epoch),
                eta: status.map(|s| s.eta),
                beta: status.map(|s| s.beta),
                score: pick.score,
                truncated_gain: pick.truncated_gain,
                untruncated_gain: pick.untruncated_gain,
            });
        }
        if steps.len() == first_new {
            break StopReason::Budget;
        }
        policy.update(env, &posterior)?;
        let (m, h, l) = policy.sets().map_or((0, 0, 0), SetState::counts);
        for rec in &mut steps[first_new..] {
            rec.m_size = m;
            rec.h_size = h;
            rec.l_size = l;
        }
        observer(&Snapshot {
            t: steps.len(),
            cumulative_cost: cumulative,
            steps: &steps,
            posterior: &posterior,
            sets: policy.sets(),
            status: policy.status(),
        })?;
        if out_of_budget {
            break StopReason::Budget;
        }
    };
    log::debug!(
        "{} seed {seed}: {} steps, cost {cumulative}, stop {}",
        policy.name(),
        steps.len(),
        stop.as_str()
    );

    Ok(RunTrace {
        policy: policy.name(),
        seed,
        start,
        steps,
        stop,
        sets: policy.sets().cloned(),
        status: policy.status(),
        posterior,
    })
}

/// Index of the largest value; the lowest index wins ties and NaN never wins.
pub(crate) fn argmax<I: IntoIterator<Item = (usize, f64)>>(scores: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        match best {
            _ if s.is_nan() => {}
            Some((bi, b)) if s < b || (s == b && i > bi) => {}
            _ => best = Some((i, s)),
        }
    }
    best
}
