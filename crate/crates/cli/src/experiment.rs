//! Runs every (algorithm, seed) pair of a configuration, writes one trace
//! pair per run and a summary over seeds.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use truvar::baselines::{ExpectedImprovement, Gchk, GpUcb, MaxVariance, Straddle};
use truvar::run::run_observed;
use truvar::{Environment, Mode, Policy, StepRecord, StopReason, TruVar};

use crate::config::{AlgorithmSpec, ExperimentConfig, ModeKind};
use crate::error::{CliError, Result};
use crate::trace::{
    metrics_path, num, render_metrics, render_steps, steps_path, write_atomic, CheckpointRecorder, CheckpointRow,
    MetricKind, TraceMeta,
};

/// Result of one (algorithm, seed) run. A failed run keeps whatever it
/// produced before the failure.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub mode: Mode,
    pub start: Option<usize>,
    pub steps: Vec<StepRecord>,
    pub checkpoints: Vec<CheckpointRow>,
    pub stop: Option<StopReason>,
    pub error: Option<String>,
    /// Exit-code class of the failure.
    pub error_code: Option<i32>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn meta(&self) -> TraceMeta {
        let mut meta = TraceMeta::default();
        meta.set("algorithm", &self.label);
        meta.set("seed", self.seed);
        meta.set("metric", MetricKind::for_mode(self.mode).as_str());
        if let Mode::Lse { threshold } = self.mode {
            meta.set("threshold", num(threshold));
        }
        meta.set("start", self.start.map_or_else(|| "none".to_string(), |s| s.to_string()));
        match (&self.error, self.stop) {
            (Some(e), _) => {
                meta.set("status", "failed");
                meta.set("error", e);
            }
            (None, Some(stop)) => {
                meta.set("status", "complete");
                meta.set("stop", stop.as_str());
            }
            (None, None) => meta.set("status", "failed"),
        }
        meta
    }
}

/// Mode with the threshold resolved for this instance.
pub fn resolve_mode(cfg: &ExperimentConfig, env: &Environment) -> Mode {
    match (cfg.mode, cfg.threshold) {
        (ModeKind::Lse, Some(t)) => Mode::Lse {
            threshold: t.resolve(env),
        },
        _ => Mode::Bo,
    }
}

/// The environment the algorithm sees: a fixed noise level is applied here.
pub fn algorithm_environment(cfg: &ExperimentConfig, alg: &AlgorithmSpec, seed: u64) -> Result<Environment> {
    let env = cfg.environment(seed)?;
    match alg.level() {
        Some(k) => Ok(env.fixed_level(k)?),
        None => Ok(env),
    }
}

pub fn build_policy(alg: &AlgorithmSpec, mode: Mode) -> Result<Box<dyn Policy>> {
    let threshold = match mode {
        Mode::Lse { threshold } => Some(threshold),
        Mode::Bo => None,
    };
    let need_threshold = || {
        threshold.ok_or_else(|| CliError::Config {
            path: "mode".into(),
            message: format!("{} needs lse mode", alg.kind()),
        })
    };
    Ok(match alg {
        AlgorithmSpec::Truvar { .. } => Box::new(TruVar::new(alg.truvar_config(mode).expect("truvar spec"))?),
        AlgorithmSpec::GpUcb { delta, divisor, .. } => Box::new(GpUcb::new(*delta, *divisor)?),
        AlgorithmSpec::Ei { use_posterior_mean, .. } => Box::new(ExpectedImprovement {
            use_posterior_mean: *use_posterior_mean,
        }),
        AlgorithmSpec::Straddle { .. } => Box::new(Straddle {
            threshold: need_threshold()?,
        }),
        AlgorithmSpec::Var { .. } => Box::new(MaxVariance),
        AlgorithmSpec::Gchk { beta_sqrt, .. } => Box::new(Gchk::new(need_threshold()?, *beta_sqrt)?),
    })
}

/// Executes one run without touching the file system.
pub fn run_single(cfg: &ExperimentConfig, alg: &AlgorithmSpec, seed: u64) -> RunOutcome {
    let mut outcome = RunOutcome {
        label: alg.label(),
        seed,
        mode: Mode::Bo,
        start: None,
        steps: Vec::new(),
        checkpoints: Vec::new(),
        stop: None,
        error: None,
        error_code: None,
    };
    let fail = |mut o: RunOutcome, e: CliError| {
        o.error_code = Some(e.exit_code());
        o.error = Some(e.to_string());
        o
    };
    let env = match algorithm_environment(cfg, alg, seed) {
        Ok(env) => env,
        Err(e) => return fail(outcome, e),
    };
    let mode = resolve_mode(cfg, &env);
    outcome.mode = mode;
    outcome.start = truvar::run::start_point(&env, seed);
    let mut policy = match build_policy(alg, mode) {
        Ok(p) => p,
        Err(e) => return fail(outcome, e),
    };
    let mut limits = cfg.limits();
    if let AlgorithmSpec::Truvar { eta_target, .. } = alg {
        limits.eta_target = *eta_target;
    }
    let mut recorder = CheckpointRecorder::new(&env, mode, &cfg.epsilons, cfg.checkpoints());
    let mut steps_seen: Vec<StepRecord> = Vec::new();
    let result = run_observed(&env, &cfg.kernel, policy.as_mut(), &limits, seed, |snap| {
        recorder.observe(snap);
        steps_seen.extend_from_slice(&snap.steps[steps_seen.len()..]);
        Ok(())
    });
    outcome.checkpoints = recorder.finish();
    match result {
        Ok(trace) => {
            outcome.steps = trace.steps;
            outcome.stop = Some(trace.stop);
            outcome
        }
        Err(e) => {
            outcome.steps = steps_seen;
            fail(outcome, e.into())
        }
    }
}

/// Per-checkpoint statistics of one algorithm across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub checkpoint: f64,
    pub runs: usize,
    pub mean: f64,
    pub median: f64,
    /// Mean after dropping the best and worst 5% of runs.
    pub trimmed_mean: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean after removing `floor(0.05 n)` values from each end.
pub fn trimmed_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 20;
    mean(&v[k..v.len() - k])
}

/// One row per (algorithm, checkpoint) over the completed runs, in
/// configuration order.
pub fn summarize(labels: &[String], outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for label in labels {
        let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| &o.label == label && !o.failed()).collect();
        let Some(first) = runs.first() else { continue };
        for (k, cp) in first.checkpoints.iter().enumerate() {
            let values: Vec<f64> = runs.iter().map(|o| o.checkpoints[k].metric).collect();
            rows.push(SummaryRow {
                label: label.clone(),
                checkpoint: cp.checkpoint,
                runs: values.len(),
                mean: mean(&values),
                median: median(&values),
                trimmed_mean: trimmed_mean(&values),
            });
        }
    }
    rows
}

pub fn render_summary(metric: MetricKind, rows: &[SummaryRow]) -> String {
    let mut out = format!("{}\n# metric={}\n", crate::trace::VERSION_LINE, metric.as_str());
    out.push_str("algorithm,checkpoint,runs,mean,median,trimmed_mean\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            num(r.checkpoint),
            r.runs,
            num(r.mean),
            num(r.median),
            num(r.trimmed_mean)
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub outcomes: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.outcomes.iter().filter(|o| o.failed())
    }
}

/// Runs all (algorithm, seed) pairs on `threads` workers (0 keeps the
/// global pool), writing `<out>/<label>/seed_<s>.{steps,metrics}.csv` and
/// `<out>/summary.csv`. Failed runs are written with `status=failed` and
/// reported as an error after the summary.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64], out_dir: &Path, threads: usize) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(CliError::Config {
            path: "seeds".into(),
            message: "needs at least one seed".into(),
        });
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.algorithms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let work = || -> Vec<Result<RunOutcome>> {
        jobs.par_iter()
            .map(|&(a, seed)| {
                let alg = &cfg.algorithms[a];
                let outcome = run_single(cfg, alg, seed);
                let dir = out_dir.join(&outcome.label);
                let meta = outcome.meta();
                write_atomic(&steps_path(&dir, seed), &render_steps(&meta, &outcome.steps))?;
                write_atomic(
                    &metrics_path(&dir, seed),
                    &render_metrics(&meta, &cfg.epsilons, &outcome.checkpoints),
                )?;
                log::info!(
                    "{} seed {seed}: {} steps, {}",
                    outcome.label,
                    outcome.steps.len(),
                    meta.get("stop").or(meta.get("error")).unwrap_or("failed")
                );
                Ok(outcome)
            })
            .collect()
    };
    let results = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config {
                path: "threads".into(),
                message: e.to_string(),
            })?
            .install(work)
    } else {
        work()
    };
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = cfg.algorithms.iter().map(AlgorithmSpec::label).collect();
    let summary = summarize(&labels, &outcomes);
    let metric = match cfg.mode {
        ModeKind::Bo => MetricKind::Regret,
        ModeKind::Lse => MetricKind::F1,
    };
    write_atomic(&out_dir.join("summary.csv"), &render_summary(metric, &summary))?;
    let report = ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        outcomes,
        summary,
    };
    let failed: Vec<&RunOutcome> = report.failures().collect();
    if let Some(first) = failed.first() {
        return Err(CliError::RunsFailed {
            failed: failed.len(),
            total: report.outcomes.len(),
            first: Box::new(run_error(first)),
        });
    }
    Ok(report)
}

fn run_error(o: &RunOutcome) -> CliError {
    let message = format!("{} seed {}: {}", o.label, o.seed, o.error.as_deref().unwrap_or(""));
    match o.error_code {
        Some(2) => CliError::Config {
            path: "run".into(),
            message,
        },
        Some(3) => CliError::Core(truvar::Error::Numerical(message)),
        Some(4) => CliError::Core(truvar::Error::Infeasible(message)),
        _ => CliError::Trace {
            path: PathBuf::from(&o.label),
            message,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimmed_mean_drops_five_percent_each_side() {
        let mut v: Vec<f64> = (0..20).map(f64::from).collect();
        v[0] = -1000.0;
        v[19] = 1000.0;
        assert_eq!(trimmed_mean(&v), mean(&v[1..19]));
        assert_eq!(trimmed_mean(&[1.0, 5.0]), 3.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
