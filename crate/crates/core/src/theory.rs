//! Constructive quantities behind the sample-complexity guarantees: confidence
//! scales, maximum information gain, greedy covering costs, the fixed-point
//! horizon conditions, and a diminishing-returns probe for variance reduction.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::gains;
use crate::domain::Domain;
use crate::env::{Action, Environment, NoiseLevel};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, Observation};
use crate::kernel::Kernel;
use crate::rng::{stream, Stream};
use crate::run::argmax;

/// Relative slack when testing `max sigma^2 <= xi^2`.
const COVER_RTOL: f64 = 1e-12;
/// A covering step reducing less than this is treated as stalled.
const COVER_MIN_PROGRESS: f64 = 1e-14;
const COVER_MAX_STEPS: usize = 10_000_000;

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `1 / log(1 + sigma^{-2})`.
pub fn c1(noise_var: f64) -> f64 {
    1.0 / (1.0 / noise_var).ln_1p()
}

/// Unit-cost confidence scale `2 log(|D| T^2 pi^2 / (6 delta))`.
pub fn beta_unit(delta: f64, domain_size: usize, t: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(2.0 * (domain_size as f64 * t * t * PI * PI / (6.0 * delta)).ln())
}

/// Cost-based confidence scale `2 log(|D| C^2 pi^2 / (6 delta c_min^2))` for
/// a cumulative cost bound `C`.
pub fn beta_cost(delta: f64, domain_size: usize, cumulative_cost: f64, min_cost: f64) -> Result<f64> {
    if !(min_cost > 0.0 && cumulative_cost > 0.0) {
        return Err(Error::Config("costs must be positive".into()));
    }
    beta_unit(delta, domain_size, cumulative_cost / min_cost)
}

/// Per-epoch scales from a table of per-epoch cost bounds; epoch `i` uses the
/// running sum of the first `i` entries.
pub fn beta_epochs(delta: f64, domain_size: usize, epoch_costs: &[f64], min_cost: f64) -> Result<Vec<f64>> {
    let mut total = 0.0;
    epoch_costs
        .iter()
        .map(|c| {
            total += c;
            beta_cost(delta, domain_size, total, min_cost)
        })
        .collect()
}

/// `2 log(|D| T^2 c_max^2 pi^2 / (6 delta c_min^2))`.
pub fn beta_multi_noise(delta: f64, domain_size: usize, t: f64, min_cost: f64, max_cost: f64) -> Result<f64> {
    if !(min_cost > 0.0 && max_cost >= min_cost) {
        return Err(Error::Config("need 0 < c_min <= c_max".into()));
    }
    beta_unit(delta, domain_size, t * max_cost / min_cost)
}

/// Sum of per-epoch costs over the epochs `i` with
/// `4 (1 + delta_bar) eta_{i-1} > epsilon`, where `eta_0 = eta_1 / r`.
pub fn epoch_cost_sum(epoch_costs: &[f64], eta_initial: f64, ratio: f64, delta_bar: f64, epsilon: f64) -> f64 {
    epoch_costs
        .iter()
        .enumerate()
        .filter(|(i, _)| 4.0 * (1.0 + delta_bar) * eta_initial * ratio.powi(*i as i32 - 1) > epsilon)
        .map(|(_, c)| c)
        .sum()
}

/// Greedy information gain: entry `j` is `1/2 log det(I + sigma^{-2} K)` for
/// the first `j + 1` greedy picks. Picks may repeat; ties go to the
/// lexicographically smallest point so the result does not depend on the
/// order of the domain.
pub fn gamma_greedy(kernel: &Kernel, domain: Arc<Domain>, noise_var: f64, horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::Config("noise variance must be positive".into()));
    }
    let mut order: Vec<usize> = (0..domain.len()).collect();
    order.sort_by(|&a, &b| {
        domain
            .point(a)
            .iter()
            .zip(domain.point(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut post = GpPosterior::prior(kernel.clone(), domain)?;
    let mut total = 0.0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (i, var) = argmax(order.iter().map(|&i| (i, post.variance(i)))).expect("non-empty");
        total += 0.5 * (var / noise_var).ln_1p();
        out.push(total);
        post.push_pending(i, noise_var)?;
    }
    Ok(out)
}

/// How `gamma_T` is obtained inside the horizon conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaModel {
    Constant(f64),
    /// `gamma_1, gamma_2, ...` from [`gamma_greedy`]; larger `T` is an error.
    Table(Vec<f64>),
    /// `1/2 |D| log(1 + T / (|D| sigma^2))`, valid for any kernel with unit
    /// prior variance on a finite domain.
    FiniteDomain,
}

impl GammaModel {
    pub fn value(&self, t: f64, domain_size: usize, noise_var: f64) -> Result<f64> {
        match self {
            GammaModel::Constant(g) => Ok(*g),
            GammaModel::Table(v) => {
                let k = t.ceil().max(1.0);
                if k > v.len() as f64 {
                    return Err(Error::Config(format!(
                        "information gain table covers T <= {}, asked for {t}",
                        v.len()
                    )));
                }
                Ok(v[k as usize - 1])
            }
            GammaModel::FiniteDomain => {
                let n = domain_size as f64;
                Ok(0.5 * n * (t / (n * noise_var)).ln_1p())
            }
        }
    }
}

/// Smallest integer `T >= 1` with `T >= rhs(T)`, by doubling then bisection.
/// Beyond `2^53` the search stops at relative precision `1e-12`.
pub fn min_fixed_point<F>(mut rhs: F, cap: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut holds = |t: f64| -> Result<bool> { Ok(t >= rhs(t)?) };
    if holds(1.0)? {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while !holds(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            if holds(cap)? {
                hi = cap;
                break;
            }
            return Err(Error::Diverged { cap });
        }
    }
    const EXACT: f64 = 9_007_199_254_740_992.0;
    loop {
        let done = if hi <= EXACT { hi - lo <= 1.0 } else { hi - lo <= 1e-12 * hi };
        if done {
            return Ok(hi);
        }
        let mid = if hi <= EXACT { ((lo + hi) / 2.0).floor() } else { 0.5 * (lo + hi) };
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// Smallest `T` with `T >= scale * gamma_T`: the greedy covering size bound
/// with `scale = C_1 beta / eta^2`.
pub fn covering_horizon(scale: f64, gamma: &GammaModel, domain_size: usize, noise_var: f64, cap: f64) -> Result<f64> {
    min_fixed_point(|t| Ok(scale * gamma.value(t, domain_size, noise_var)?), cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverRule {
    /// Sample the largest remaining standard deviation within the targets.
    MaxVariance,
    /// Largest truncated variance reduction per unit cost over all actions.
    CostWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covering {
    pub actions: Vec<Action>,
    pub cost: f64,
}

/// Greedy set of actions after which the prior-conditioned standard
/// deviation is at most `xi` on every target.
pub fn covering_cost(
    kernel: &Kernel,
    env: &Environment,
    xi: f64,
    targets: &[usize],
    rule: CoverRule,
) -> Result<Covering> {
    if !(xi > 0.0) {
        return Err(Error::Config(format!("xi must be positive, got {xi}")));
    }
    for &m in targets {
        env.domain().check_index(m)?;
    }
    if rule == CoverRule::MaxVariance && env.num_levels() > 1 {
        return Err(Error::Config("max-variance covering needs a single noise level".into()));
    }
    let xi2 = xi * xi;
    let mut post = GpPosterior::prior(kernel.clone(), env.domain().clone())?;
    let mut actions = Vec::new();
    let mut cost = 0.0;
    let mut previous = None;
    loop {
        let worst = targets.iter().map(|&m| post.variance(m)).fold(0.0, f64::max);
        if worst <= xi2 * (1.0 + COVER_RTOL) {
            return Ok(Covering { actions, cost });
        }
        if actions.len() >= COVER_MAX_STEPS {
            return Err(Error::Infeasible(format!(
                "covering did not reach xi = {xi} within {COVER_MAX_STEPS} samples"
            )));
        }
        let (action, progress) = match rule {
            CoverRule::MaxVariance => {
                let (i, _) = argmax(targets.iter().map(|&m| (m, post.variance(m)))).expect("non-empty");
                let a = Action::at(i);
                let before = post.variance(i);
                let after = post.lookahead_variances(i, env.declared_noise_var(a), &[i])?[0];
                (a, before - after)
            }
            CoverRule::CostWeighted => {
                let mut best: Option<(Action, f64, f64)> = None;
                for a in env.actions() {
                    let g = gains(&post, targets, 1.0, xi, a.point, env.declared_noise_var(a));
                    let score = g.truncated / env.cost(previous, a);
                    if best.is_none_or(|(_, b, _)| score > b) {
                        best = Some((a, score, g.truncated));
                    }
                }
                let (a, _, g) = best.expect("non-empty domain");
                (a, g)
            }
        };
        if !(progress >= COVER_MIN_PROGRESS) {
            return Err(Error::Infeasible(format!(
                "covering stalled at max sigma^2 = {worst:e} above xi^2 = {xi2:e}"
            )));
        }
        cost += env.cost(previous, action);
        post.push_pending(action.point, env.declared_noise_var(action))?;
        actions.push(action);
        previous = Some(action.point);
    }
}

/// Inputs of the horizon conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub domain_size: usize,
    pub noise_var: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_bar: f64,
    pub gamma: GammaModel,
    /// Selectable noise levels; empty skips the per-level evaluation.
    pub levels: Vec<NoiseLevel>,
    pub cap: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_bar > 0.0 && self.delta_bar.is_finite()) {
            return Err(Error::Config(format!(
                "delta_bar must be positive for the bounds, got {}",
                self.delta_bar
            )));
        }
        check_delta(self.delta)?;
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config(format!(
                "noise_var must be positive, got {}",
                self.noise_var
            )));
        }
        if self.domain_size < 2 {
            return Err(Error::Config("domain_size must be at least 2".into()));
        }
        if !(self.cap > 1.0) {
            return Err(Error::Config("cap must exceed 1".into()));
        }
        for (k, l) in self.levels.iter().enumerate() {
            if !(l.variance > 0.0 && l.cost > 0.0) {
                return Err(Error::Config(format!("levels[{k}] needs positive variance and cost")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelBound {
    pub variance: f64,
    pub cost: f64,
    pub t_star: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub c1: f64,
    pub t_simplified: f64,
    pub t_improved: f64,
    pub levels: Vec<LevelBound>,
    pub best_level: Option<usize>,
    pub c_multi_noise: Option<f64>,
}

fn log_factor(inputs: &BoundInputs, beta: f64) -> f64 {
    let db = 1.0 + inputs.delta_bar;
    let e = inputs.epsilon;
    (16.0 * db * db * inputs.domain_size as f64 * beta / (inputs.delta_bar.powi(2) * e * e)).ln()
}

fn ceil_log2(x: f64) -> f64 {
    x.log2().ceil().max(0.0)
}

/// Right-hand side of the unit-cost condition with `C_1 = 1/log(1+sigma^{-2})`.
pub fn simplified_rhs(inputs: &BoundInputs, t: f64) -> Result<f64> {
    let beta = beta_unit(inputs.delta, inputs.domain_size, t)?;
    let gamma = inputs.gamma.value(t, inputs.domain_size, inputs.noise_var)?;
    let db = 1.0 + inputs.delta_bar;
    let e = inputs.epsilon;
    let main = c1(inputs.noise_var) * gamma * beta * 96.0 * db * db / (e * e);
    Ok((main + 2.0 * ceil_log2(8.0 * db / e)) * log_factor(inputs, beta))
}

/// Right-hand side of the refined condition at noise variance `noise_var`
/// and confidence scale `beta`.
fn improved_rhs_with(inputs: &BoundInputs, t: f64, noise_var: f64, beta: f64) -> Result<f64> {
    let gamma = inputs.gamma.value(t, inputs.domain_size, noise_var)?;
    let db = 1.0 + inputs.delta_bar;
    let e = inputs.epsilon;
    let low = 2.0 * noise_var * gamma * beta * 96.0 * db * db / (e * e);
    let high = c1(noise_var) * gamma * beta * 6.0 * db * db / noise_var;
    let rounds = 2.0 * ceil_log2(32.0 * db * db / (e * noise_var.sqrt()));
    Ok((low + high + rounds) * log_factor(inputs, beta))
}

pub fn improved_rhs(inputs: &BoundInputs, t: f64) -> Result<f64> {
    let beta = beta_unit(inputs.delta, inputs.domain_size, t)?;
    improved_rhs_with(inputs, t, inputs.noise_var, beta)
}

/// Smallest horizons satisfying the simplified and refined conditions, and
/// per noise level the refined horizon under the cost-ratio scale together
/// with the cheapest `c(k) T*(k)`.
pub fn corollary_bounds(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let t_simplified = min_fixed_point(|t| simplified_rhs(inputs, t), inputs.cap)?;
    let t_improved = min_fixed_point(|t| improved_rhs(inputs, t), inputs.cap)?;
    let mut levels = Vec::with_capacity(inputs.levels.len());
    if !inputs.levels.is_empty() {
        let c_min = inputs.levels.iter().map(|l| l.cost).fold(f64::INFINITY, f64::min);
        let c_max = inputs.levels.iter().map(|l| l.cost).fold(0.0, f64::max);
        for level in &inputs.levels {
            let t_star = min_fixed_point(
                |t| {
                    let beta = beta_multi_noise(inputs.delta, inputs.domain_size, t, c_min, c_max)?;
                    improved_rhs_with(inputs, t, level.variance, beta)
                },
                inputs.cap,
            )?;
            levels.push(LevelBound {
                variance: level.variance,
                cost: level.cost,
                t_star,
                total_cost: level.cost * t_star,
            });
        }
    }
    let best = argmax(levels.iter().enumerate().map(|(k, l)| (k, -l.total_cost)));
    Ok(BoundReport {
        c1: c1(inputs.noise_var),
        t_simplified,
        t_improved,
        best_level: best.map(|b| b.0),
        c_multi_noise: best.map(|b| -b.1),
        levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SubmodularityReport {
    pub trials: usize,
    pub violations: usize,
    pub max_violation: f64,
    /// Largest disagreement between lookahead-based and refit-based `psi`.
    pub max_oracle_error: f64,
}

impl SubmodularityReport {
    fn merge(&mut self, other: &Self) {
        self.trials += other.trials;
        self.violations += other.violations;
        self.max_violation = self.max_violation.max(other.max_violation);
        self.max_oracle_error = self.max_oracle_error.max(other.max_oracle_error);
    }
}

/// Diminishing-returns gap beyond which a probe counts as a violation.
pub const SUBMODULARITY_TOL: f64 = 1e-9;

struct Probe<'a> {
    base: &'a GpPosterior,
    target: usize,
    noise_var: f64,
}

impl Probe<'_> {
    /// `psi(S) = sigma_t^2(x) - sigma_{t|S}^2(x)` and its refit counterpart.
    fn psi(&self, s: &[usize]) -> Result<(f64, f64)> {
        let added: Vec<(usize, f64)> = s.iter().map(|&i| (i, self.noise_var)).collect();
        let before = self.base.variance(self.target);
        let fast = before - self.base.batch_lookahead_variances(&added, &[self.target])?[0];
        let mut history = self.base.history().to_vec();
        history.extend(s.iter().map(|&i| Observation::new(i, 0.0, self.noise_var)));
        let refit = GpPosterior::fit(self.base.kernel().clone(), self.base.domain().clone(), &history)?;
        let slow = before - refit.variance(self.target);
        Ok((fast, slow))
    }

    fn check(&self, small: &[usize], large: &[usize], v: usize) -> Result<SubmodularityReport> {
        let with = |s: &[usize]| -> Vec<usize> { s.iter().copied().chain([v]).collect() };
        let vals = [
            self.psi(small)?,
            self.psi(&with(small))?,
            self.psi(large)?,
            self.psi(&with(large))?,
        ];
        let oracle = vals.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let gap = (vals[3].0 - vals[2].0) - (vals[1].0 - vals[0].0);
        Ok(SubmodularityReport {
            trials: 1,
            violations: usize::from(gap > SUBMODULARITY_TOL),
            max_violation: gap.max(0.0),
            max_oracle_error: oracle,
        })
    }
}

/// Random probes of `psi(S + v) - psi(S) >= psi(S' + v) - psi(S')` for
/// `S` a sub-multiset of `S'`, each on a random history of up to
/// `max_history` observations.
pub fn submodularity_check(
    kernel: &Kernel,
    domain: Arc<Domain>,
    noise_var: f64,
    trials: usize,
    max_history: usize,
    seed: u64,
) -> Result<SubmodularityReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let n = domain.len();
    let mut rng = stream(seed, Stream::Probe);
    let prior = GpPosterior::prior(kernel.clone(), domain)?;
    let mut report = SubmodularityReport::default();
    for _ in 0..trials {
        let mut base = prior.clone();
        for _ in 0..rng.random_range(0..=max_history) {
            base.push(rng.random_range(0..n), 0.0, noise_var)?;
        }
        let large: Vec<usize> = (0..rng.random_range(0..=4)).map(|_| rng.random_range(0..n)).collect();
        let mut small = large.clone();
        small.shuffle(&mut rng);
        small.truncate(rng.random_range(0..=large.len()));
        let probe = Probe {
            base: &base,
            target: rng.random_range(0..n),
            noise_var,
        };
        report.merge(&probe.check(&small, &large, rng.random_range(0..n))?);
    }
    Ok(report)
}

/// Every probe on a two-point domain with histories and sets of up to
/// `max_count` copies of each point.
pub fn submodularity_exhaustive_two_point(
    kernel: &Kernel,
    domain: Arc<Domain>,
    noise_var: f64,
    max_count: usize,
) -> Result<SubmodularityReport> {
    if domain.len() != 2 {
        return Err(Error::Config(format!("expected a 2-point domain, got {}", domain.len())));
    }
    let multiset = |a: usize, b: usize| -> Vec<usize> { [0].repeat(a).into_iter().chain([1].repeat(b)).collect() };
    let prior = GpPosterior::prior(kernel.clone(), domain)?;
    let mut report = SubmodularityReport::default();
    for (ha, hb) in (0..=max_count).flat_map(|a| (0..=max_count).map(move |b| (a, b))) {
        let mut base = prior.clone();
        for i in multiset(ha, hb) {
            base.push(i, 0.0, noise_var)?;
        }
        for target in 0..2 {
            let probe = Probe {
                base: &base,
                target,
                noise_var,
            };
            for (la, lb) in (0..=max_count).flat_map(|a| (0..=max_count).map(move |b| (a, b))) {
                for (sa, sb) in (0..=la).flat_map(|a| (0..=lb).map(move |b| (a, b))) {
                    for v in 0..2 {
                        report.merge(&probe.check(&multiset(sa, sb), &multiset(la, lb), v)?);
                    }
                }
            }
        }
    }
    Ok(report)
}
