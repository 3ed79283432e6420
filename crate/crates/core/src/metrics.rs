//! Run evaluation against the ground truth: epsilon-accuracy of the set
//! state, F1 of the posterior-mean classification, and reported-point regret.

use serde::Serialize;

use crate::algorithm::Mode;
use crate::env::Environment;
use crate::gp::GpPosterior;
use crate::run::argmax;
use crate::sets::{Label, SetState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsAccuracyReport {
    pub epsilon: f64,
    pub holds: bool,
    /// Points violating the criterion (a missing maximizer counts as one).
    pub witnesses: Vec<usize>,
    /// Largest violation amount over all checked points; non-positive iff
    /// the criterion holds.
    pub worst_margin: f64,
}

/// Optimization: `M_t` contains every true maximizer and only points within
/// `epsilon` of the optimum. Level sets: `H_t` lies strictly above `h`,
/// `L_t` strictly below, and points of `M_t` within `epsilon / 2` of `h`.
pub fn eps_accuracy(env: &Environment, sets: &SetState, mode: Mode, epsilon: f64) -> EpsAccuracyReport {
    let mut witnesses = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut check = |i: usize, violation: f64, strict: bool| {
        worst = worst.max(violation);
        if violation > 0.0 || (strict && violation == 0.0) {
            witnesses.push(i);
        }
    };
    match mode {
        Mode::Bo => {
            let best = env.max_value();
            for i in 0..env.len() {
                match sets.label(i) {
                    Label::Unclassified => check(i, best - env.value(i) - epsilon, false),
                    _ if env.value(i) == best => check(i, f64::INFINITY, false),
                    _ => {}
                }
            }
        }
        Mode::Lse { threshold } => {
            for i in 0..env.len() {
                let f = env.value(i);
                match sets.label(i) {
                    Label::Unclassified => check(i, (f - threshold).abs() - epsilon / 2.0, false),
                    Label::Above => check(i, threshold - f, true),
                    Label::Below => check(i, f - threshold, true),
                    Label::Discarded => check(i, f64::INFINITY, false),
                }
            }
        }
    }
    witnesses.sort_unstable();
    witnesses.dedup();
    EpsAccuracyReport {
        epsilon,
        holds: witnesses.is_empty(),
        witnesses,
        worst_margin: if worst == f64::NEG_INFINITY { 0.0 } else { worst },
    }
}

/// F1 of `predicted` against `truth` membership; 0 when both precision and
/// recall vanish.
pub fn f1_from_membership(predicted: &[bool], truth: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// F1 of `{x : mu_t(x) >= h}` against the true superlevel set `{x : f(x) > h}`.
pub fn f1_score(posterior: &GpPosterior, env: &Environment, threshold: f64) -> f64 {
    let predicted: Vec<bool> = posterior.means().iter().map(|&m| m >= threshold).collect();
    let truth: Vec<bool> = env.truth().iter().map(|&f| f > threshold).collect();
    f1_from_membership(&predicted, &truth)
}

/// Point with the highest posterior mean (lowest index on ties).
pub fn reported_point(posterior: &GpPosterior) -> usize {
    argmax(posterior.means().iter().copied().enumerate())
        .map(|(i, _)| i)
        .expect("non-empty domain")
}

/// `f(x*) - f(argmax mu_t)`.
pub fn reported_regret(posterior: &GpPosterior, env: &Environment) -> f64 {
    env.max_value() - env.value(reported_point(posterior))
}
