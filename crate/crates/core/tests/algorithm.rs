mod common;

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use common::dense_variances_after;
use proptest::prelude::*;
use truvar::algorithm::{acquisition, beta_practical};
use truvar::baselines::{gchk_select, gp_ucb_select, straddle_select, var_select, Gchk, MaxVariance};
use truvar::env::synth_gp_function;
use truvar::metrics::f1_score;
use truvar::run::{run_observed, Snapshot};
use truvar::sets::{confidence_bounds, Label, SetState};
use truvar::{
    run, Action, CostModel, Domain, Environment, GpPosterior, Kernel, Mode, NoiseModel, Policy, RunLimits,
    StopReason, TruVar, TruVarConfig, TruVarState,
};

fn far_pair() -> Arc<Domain> {
    Arc::new(Domain::new(1, vec![0.0, 100.0]).unwrap())
}

fn state(n: usize, beta: f64, eta: f64) -> TruVarState {
    TruVarState {
        epoch: 1,
        eta,
        beta,
        epoch_start: 1,
        sets: SetState::new(n),
        finished: None,
    }
}

fn grid_env(side: usize, seed: u64, noise: f64) -> (Kernel, Environment) {
    let k = Kernel::squared_exponential(0.2, 2).unwrap();
    let d = Arc::new(Domain::unit_grid(side, 2).unwrap());
    let env = synth_gp_function(&k, d, 30, seed)
        .unwrap()
        .with_noise(NoiseModel::Constant(noise))
        .unwrap();
    (k, env)
}

fn upper_quartile(env: &Environment) -> f64 {
    env.min_value() + 0.75 * (env.max_value() - env.min_value())
}

#[test]
fn acquisition_hand_example() {
    // sigma^2_{0|x}(x) = 0.5 with unit noise: max{4, .04} - max{2, .04} = 2
    let env = Environment::new(far_pair(), vec![0.0, 0.0])
        .unwrap()
        .with_noise(NoiseModel::Constant(1.0))
        .unwrap();
    let gp = GpPosterior::prior(Kernel::squared_exponential(0.1, 1).unwrap(), env.domain().clone()).unwrap();
    let s = state(2, 4.0, 0.2);
    assert_abs_diff_eq!(acquisition(&gp, &s, &env, None, Action::at(0)).unwrap(), 2.0, epsilon = 1e-12);
}

#[test]
fn saturated_truncation_scores_zero() {
    let (k, env) = grid_env(4, 1, 1e-3);
    let gp = GpPosterior::prior(k, env.domain().clone()).unwrap();
    let s = state(env.len(), 2.0, 5.0);
    for a in env.actions() {
        assert_eq!(acquisition(&gp, &s, &env, None, a).unwrap(), 0.0);
    }
}

#[test]
fn doubling_cost_halves_score() {
    let (k, env) = grid_env(3, 2, 1e-3);
    let n = env.len();
    let gp = GpPosterior::prior(k, env.domain().clone()).unwrap();
    let s = state(n, 3.0, 0.1);
    let mut costs = vec![1.0; n];
    costs[4] = 2.0;
    let doubled = env.clone().with_cost(CostModel::PerPoint(costs)).unwrap();
    let a = acquisition(&gp, &s, &env, None, Action::at(4)).unwrap();
    let b = acquisition(&gp, &s, &doubled, None, Action::at(4)).unwrap();
    assert_eq!(b, a / 2.0);
}

#[test]
fn first_pick_ties_to_lowest_index_or_cheapest() {
    let d = Arc::new(Domain::unit_grid(6, 1).unwrap());
    let k = Kernel::squared_exponential(0.01, 1).unwrap();
    let env = Environment::new(d, vec![0.0; 6]).unwrap();
    let mut cfg = TruVarConfig::bo();
    cfg.eta_initial = 0.1;
    let mut p = TruVar::new(cfg.clone()).unwrap();
    let trace = run(&env, &k, &mut p, &RunLimits::steps(1), 0).unwrap();
    assert_eq!(trace.steps[0].point, 0);

    let priced = env.with_cost(CostModel::PerPoint(vec![3.0, 3.0, 3.0, 1.0, 3.0, 3.0])).unwrap();
    let mut p = TruVar::new(cfg).unwrap();
    let trace = run(&priced, &k, &mut p, &RunLimits::steps(1), 0).unwrap();
    assert_eq!(trace.steps[0].point, 3);
}

#[test]
fn prior_sets_keep_everything_unclassified() {
    let (k, env) = grid_env(4, 3, 1e-3);
    let gp = GpPosterior::prior(k, env.domain().clone()).unwrap();
    for h in [-1.5, 0.0, 1.5] {
        let mut p = TruVar::new(TruVarConfig::lse(h)).unwrap();
        p.start(&env, &gp, &RunLimits::budget(10.0)).unwrap();
        let beta = p.state().unwrap().beta;
        assert!(h.abs() < beta.sqrt());
        p.update_sets(&gp).unwrap();
        assert_eq!(p.sets().unwrap().counts(), (env.len(), 0, 0));
        let (lo, up) = confidence_bounds(&gp, beta);
        assert!(lo.iter().all(|&l| l == -beta.sqrt()));
        assert!(up.iter().all(|&u| u == beta.sqrt()));
    }
}

#[test]
fn classified_point_never_leaves() {
    let mut s = SetState::new(2);
    s.update_lse(&[1.01, -1.0], &[2.0, 1.0], 1.0, true);
    assert_eq!(s.label(0), Label::Above);
    s.update_lse(&[-5.0, -1.0], &[5.0, 1.0], 1.0, true);
    assert_eq!(s.label(0), Label::Above);
    s.update_lse(&[-5.0, -1.0], &[5.0, 1.0], 1.0, false);
    assert_eq!(s.label(0), Label::Unclassified);
}

#[test]
fn bo_sets_on_fixed_bounds() {
    // mu = (0, 1, 2), sigma = 0.1, beta^{1/2} = 1
    let mut s = SetState::new(3);
    s.update_bo(&[-0.1, 0.9, 1.9], &[0.1, 1.1, 2.1], true);
    assert_eq!(s.active(), &[2]);
}

fn boundary_setup(shrink: bool) -> usize {
    let env = Environment::new(far_pair(), vec![0.0, 1.0]).unwrap();
    let a = 1.0 / 2f64.ln();
    let beta = beta_practical(a, 2, 1);
    let mut cfg = TruVarConfig::bo();
    cfg.beta_rule = truvar::BetaRule::Practical { a };
    cfg.eta_initial = if shrink { beta.sqrt().next_down() } else { beta.sqrt() };
    let gp = GpPosterior::prior(Kernel::squared_exponential(0.1, 1).unwrap(), env.domain().clone()).unwrap();
    let mut p = TruVar::new(cfg).unwrap();
    p.start(&env, &gp, &RunLimits::budget(5.0)).unwrap();
    p.update_sets(&gp).unwrap();
    p.maybe_advance_epoch(&env, &gp).unwrap()
}

#[test]
fn epoch_advances_on_equality() {
    assert!(boundary_setup(false) >= 1);
    assert_eq!(boundary_setup(true), 0);
}

#[test]
fn two_point_noiseless_lse_resolves() {
    let d = Arc::new(Domain::unit_grid(2, 1).unwrap());
    let env = Environment::new(d, vec![-1.0, 1.0])
        .unwrap()
        .with_noise(NoiseModel::Constant(0.0))
        .unwrap();
    let k = Kernel::squared_exponential(0.05, 1).unwrap();
    let mut p = TruVar::new(TruVarConfig::lse(0.0)).unwrap();
    let trace = run(&env, &k, &mut p, &RunLimits::budget(10.0), 0).unwrap();
    assert_eq!(trace.stop, StopReason::Resolved);
    assert!(trace.sets.as_ref().unwrap().active().is_empty());
    assert_eq!(trace.steps.len(), 2);
    assert_eq!(f1_score(&trace.posterior, &env, 0.0), 1.0);
}

#[test]
fn budget_below_first_cost_takes_no_steps() {
    let (k, env) = grid_env(3, 0, 1e-3);
    let env = env.with_cost(CostModel::Constant(2.0)).unwrap();
    let mut p = TruVar::new(TruVarConfig::bo()).unwrap();
    let trace = run(&env, &k, &mut p, &RunLimits::budget(1.5), 0).unwrap();
    assert!(trace.steps.is_empty());
    assert_eq!(trace.stop, StopReason::Budget);
}

#[test]
fn multi_noise_costs_add_up() {
    let (k, env) = grid_env(4, 5, 1e-3);
    let env = env.multi_noise(&[1e-6, 1e-3, 0.05], &[15.0, 10.0, 2.0]).unwrap();
    let mut p = TruVar::new(TruVarConfig::lse(upper_quartile(&env))).unwrap();
    let trace = run(&env, &k, &mut p, &RunLimits::budget(300.0), 9).unwrap();
    assert!(!trace.steps.is_empty());
    let mut total = 0.0;
    for s in &trace.steps {
        assert_eq!(s.cost, [15.0, 10.0, 2.0][s.level]);
        total += s.cost;
        assert_eq!(s.cumulative_cost, total);
    }
    assert!(total <= 300.0);
}

/// Picks that maximize the truncated reduction one at a time, computed
/// from dense refits.
fn brute_force_pair(
    k: &Kernel,
    d: &Domain,
    history: &[(usize, f64, f64)],
    noise: f64,
    beta: f64,
    eta: f64,
) -> Vec<usize> {
    let truncated = |vars: &[f64]| -> f64 { vars.iter().map(|v| (beta * v).max(eta * eta)).sum() };
    let mut added: Vec<(usize, f64)> = Vec::new();
    for _ in 0..2 {
        let base = truncated(&dense_variances_after(k, d, history, &added));
        let mut best = (0, f64::NEG_INFINITY);
        for x in 0..d.len() {
            let mut with = added.clone();
            with.push((x, noise));
            let gain = base - truncated(&dense_variances_after(k, d, history, &with));
            if gain > best.1 + 1e-12 {
                best = (x, gain);
            }
        }
        added.push((best.0, noise));
    }
    added.iter().map(|a| a.0).collect()
}

#[test]
fn batch_of_two_matches_sequential_oracle() {
    let d = Arc::new(Domain::new(1, vec![0.0, 0.15, 0.5]).unwrap());
    let k = Kernel::squared_exponential(0.2, 1).unwrap();
    let env = Environment::new(d.clone(), vec![0.0, 0.3, -0.2])
        .unwrap()
        .with_noise(NoiseModel::Constant(0.05))
        .unwrap();
    for history in [vec![], vec![(2, 0.1, 0.05)], vec![(0, 0.5, 0.05), (0, 0.4, 0.05)]] {
        let mut gp = GpPosterior::prior(k.clone(), d.clone()).unwrap();
        for &(i, y, v) in &history {
            gp.push(i, y, v).unwrap();
        }
        let mut cfg = TruVarConfig::bo();
        cfg.batch_size = 2;
        cfg.eta_initial = 0.1;
        cfg.beta_rule = truvar::BetaRule::Practical { a: 2.0 };
        let mut p = TruVar::new(cfg).unwrap();
        p.start(&env, &gp, &RunLimits::budget(10.0)).unwrap();
        let st = p.state().unwrap().clone();
        let picks: Vec<usize> = p.select(&env, &gp, None).unwrap().iter().map(|p| p.action.point).collect();
        assert_eq!(picks, brute_force_pair(&k, &d, &history, 0.05, st.beta, st.eta));
    }
}

#[test]
fn gp_ucb_examples() {
    let k = Kernel::squared_exponential(0.1, 1).unwrap();
    let gp = GpPosterior::prior(k.clone(), far_pair()).unwrap();
    assert_eq!(gp_ucb_select(&gp, 2.0).0, 0);
    // point 0 keeps the prior, point 1 gets mu = 1, sigma = 0.1
    let v = 0.01 / 0.99;
    let gp = gp.extend(1, 1.0 + v, v).unwrap();
    assert_abs_diff_eq!(gp.mean(1), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(gp.std_dev(1), 0.1, epsilon = 1e-12);
    assert_eq!(gp_ucb_select(&gp, 1.0).0, 1);
    assert_eq!(gp_ucb_select(&gp, 1e6).0, 0);
}

#[test]
fn straddle_example() {
    // h = -1: point 0 has mu = h, sigma = 0.1; point 1 has mu = h + 1, sigma = 1
    let v = 0.01 / 0.99;
    let gp = GpPosterior::prior(Kernel::squared_exponential(0.1, 1).unwrap(), far_pair())
        .unwrap()
        .extend(0, -(1.0 + v), v)
        .unwrap();
    let (i, s) = straddle_select(&gp, -1.0);
    assert_eq!(i, 1);
    assert_abs_diff_eq!(s, 0.96, epsilon = 1e-12);
    let prior = GpPosterior::prior(Kernel::squared_exponential(0.1, 1).unwrap(), far_pair()).unwrap();
    assert_eq!(straddle_select(&prior, 0.7).0, 0);
}

#[test]
fn var_never_repeats_before_covering() {
    let d = Arc::new(Domain::unit_grid(7, 1).unwrap());
    let env = Environment::new(d, vec![0.0; 7]).unwrap();
    let k = Kernel::squared_exponential(0.3, 1).unwrap();
    let trace = run(&env, &k, &mut MaxVariance, &RunLimits::steps(7), 0).unwrap();
    let mut seen: Vec<usize> = trace.steps.iter().map(|s| s.point).collect();
    assert_eq!(trace.steps[0].point, 0);
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 7);
    assert_eq!(var_select(&GpPosterior::prior(k, env.domain().clone()).unwrap()).0, 0);
}

#[test]
fn gchk_pick_is_the_most_ambiguous() {
    let (k, env) = grid_env(5, 4, 1e-3);
    let mut gp = GpPosterior::prior(k, env.domain().clone()).unwrap();
    for (i, y) in [(3, 0.4), (12, -0.2), (20, 1.1)] {
        gp.push(i, y, 1e-3).unwrap();
    }
    let active: Vec<usize> = (0..env.len()).filter(|i| i % 3 != 0).collect();
    let h = 0.3;
    let (pick, score) = gchk_select(&gp, &active, h, 3.0).unwrap();
    let amb = |i: usize| {
        let w = 3.0 * gp.std_dev(i);
        (gp.mean(i) + w - h).min(h - gp.mean(i) + w)
    };
    let best = active.iter().map(|&i| amb(i)).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(score, best);
    assert_eq!(pick, *active.iter().find(|&&i| amb(i) == best).unwrap());
    assert!(gchk_select(&gp, &[], h, 3.0).is_none());
}

#[test]
fn baselines_reject_multi_level_environments() {
    let (k, env) = grid_env(3, 0, 1e-3);
    let env = env.multi_noise(&[1e-3, 0.1], &[2.0, 1.0]).unwrap();
    assert!(run(&env, &k, &mut MaxVariance, &RunLimits::steps(2), 0).is_err());
}

#[test]
fn posterior_does_not_depend_on_the_policy() {
    let (k, env) = grid_env(4, 6, 1e-3);
    let mut p = TruVar::new(TruVarConfig::lse(upper_quartile(&env))).unwrap();
    let trace = run(&env, &k, &mut p, &RunLimits::budget(12.0), 1).unwrap();
    let mut replay = GpPosterior::prior(k, env.domain().clone()).unwrap();
    for s in &trace.steps {
        replay.push(s.point, s.y, env.declared_noise_var(Action::at(s.point))).unwrap();
    }
    assert_eq!(replay.means(), trace.posterior.means());
    assert_eq!(replay.variances(), trace.posterior.variances());
}

/// Checks every snapshot of a run against the set and epoch invariants.
struct Invariants {
    prev: Option<Vec<Label>>,
    lse: bool,
    monotone: bool,
    delta_bar: f64,
    eta_initial: f64,
    ratio: f64,
    failures: Vec<String>,
}

impl Invariants {
    fn new(cfg: &TruVarConfig) -> Self {
        Self {
            prev: None,
            lse: matches!(cfg.mode, Mode::Lse { .. }),
            monotone: cfg.monotone,
            delta_bar: cfg.delta_bar,
            eta_initial: cfg.eta_initial,
            ratio: cfg.ratio,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, snap: &Snapshot<'_>) {
        let sets = snap.sets.expect("truvar sets");
        let labels = sets.labels().to_vec();
        let (m, h, l) = sets.counts();
        if self.lse && m + h + l != labels.len() {
            self.failures.push(format!("t={} partition {m}+{h}+{l}", snap.t));
        }
        if let (Some(prev), true) = (&self.prev, self.monotone) {
            for (i, (a, b)) in prev.iter().zip(&labels).enumerate() {
                let ok = a == b || *a == Label::Unclassified;
                if !ok {
                    self.failures.push(format!("t={} point {i} moved {a:?} -> {b:?}", snap.t));
                }
            }
        }
        let st = snap.status.expect("status");
        let eta = self.eta_initial * self.ratio.powi(st.epoch as i32 - 1);
        if (st.eta - eta).abs() > 4.0 * f64::EPSILON * eta {
            self.failures.push(format!("t={} eta {} vs {eta}", snap.t, st.eta));
        }
        if snap.t > 0 && !sets.active().is_empty() {
            let width = sets
                .active()
                .iter()
                .map(|&i| snap.posterior.std_dev(i))
                .fold(0.0, f64::max)
                * st.beta.sqrt();
            if width <= (1.0 + self.delta_bar) * st.eta {
                self.failures.push(format!("t={} epoch should have advanced", snap.t));
            }
        }
        self.prev = Some(labels);
    }
}

fn checked_run(env: &Environment, k: &Kernel, cfg: TruVarConfig, budget: f64, seed: u64) -> Vec<String> {
    let mut inv = Invariants::new(&cfg);
    let mut p = TruVar::new(cfg).unwrap();
    let trace = run_observed(env, k, &mut p, &RunLimits::budget(budget), seed, |s| {
        inv.check(s);
        Ok(())
    })
    .unwrap();
    let mut failures = inv.failures;
    // the epoch-exit check does not apply to the snapshot that ended the run
    if trace.stop != StopReason::Budget {
        let last = format!("t={} epoch should have advanced", trace.steps.len());
        failures.retain(|f| f != &last);
    }
    let mut total = 0.0;
    for s in &trace.steps {
        total += s.cost;
        if s.cumulative_cost != total {
            failures.push(format!("t={} cumulative cost", s.t));
        }
        if s.score < -1e-12 {
            failures.push(format!("t={} negative score {}", s.t, s.score));
        }
        if s.truncated_gain.unwrap() > s.untruncated_gain.unwrap() + 1e-12 {
            failures.push(format!("t={} truncated gain exceeds untruncated", s.t));
        }
    }
    failures
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lse_runs_keep_set_and_epoch_invariants(seed in 0u64..10_000, monotone in any::<bool>(), delta_bar in 0.0f64..0.5) {
        let (k, env) = grid_env(5, seed, 1e-3);
        let mut cfg = TruVarConfig::lse(upper_quartile(&env));
        cfg.monotone = monotone;
        cfg.delta_bar = delta_bar;
        let failures = checked_run(&env, &k, cfg, 40.0, seed);
        prop_assert!(failures.is_empty(), "{failures:?}");
    }

    #[test]
    fn bo_runs_keep_set_and_epoch_invariants(seed in 0u64..10_000, restrict in any::<bool>()) {
        let (k, env) = grid_env(5, seed, 1e-4);
        let mut cfg = TruVarConfig::bo();
        cfg.restrict_to_active = restrict;
        let failures = checked_run(&env, &k, cfg, 40.0, seed);
        prop_assert!(failures.is_empty(), "{failures:?}");
    }

    #[test]
    fn travel_cost_runs_accumulate_exactly(seed in 0u64..10_000) {
        let k = Kernel::new(truvar::KernelFamily::SquaredExponential, vec![4.0, 0.2], 1.0).unwrap();
        let d = Arc::new(Domain::grid(&[6, 4], &[0.0, 0.0], &[20.0, 1.0]).unwrap());
        let env = synth_gp_function(&k, d, 20, seed).unwrap().with_cost(CostModel::Travel).unwrap();
        let cfg = TruVarConfig::lse(upper_quartile(&env));
        let failures = checked_run(&env, &k, cfg, 150.0, seed);
        prop_assert!(failures.is_empty(), "{failures:?}");
    }

    #[test]
    fn gchk_sets_partition_and_grow(seed in 0u64..10_000) {
        let (k, env) = grid_env(5, seed, 1e-3);
        let h = upper_quartile(&env);
        let mut g = Gchk::new(h, 3.0).unwrap();
        let mut prev: Option<Vec<Label>> = None;
        let mut bad = 0;
        run_observed(&env, &k, &mut g, &RunLimits::budget(40.0), seed, |s| {
            let sets = s.sets.unwrap();
            let (m, hh, l) = sets.counts();
            if m + hh + l != env.len() { bad += 1; }
            if let Some(p) = &prev {
                bad += p.iter().zip(sets.labels()).filter(|(a, b)| a != b && **a != Label::Unclassified).count();
            }
            prev = Some(sets.labels().to_vec());
            Ok(())
        }).unwrap();
        prop_assert_eq!(bad, 0);
    }

    #[test]
    fn ei_dominates_plain_improvement(mean in -3.0f64..3.0, sd in 0.0f64..2.0, xi in -3.0f64..3.0) {
        let ei = truvar::baselines::expected_improvement(mean, sd, xi);
        prop_assert!(ei >= (mean - xi).max(0.0));
    }
}
