//! Experiment and bound configuration files (TOML, unknown keys rejected).

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use truvar::env::{load_grid_csv, prior_sample_env, synth_gp_function, DEFAULT_NOISE_VAR};
use truvar::theory::{BoundInputs, GammaModel};
use truvar::{
    BetaRule, CostModel, Domain, Environment, Kernel, Mode, NoiseLevel, NoiseModel, RunLimits, TruVarConfig,
};

use crate::error::{CliError, Result};

fn bad(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Bo,
    Lse,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdSpec {
    /// Absolute level `h`.
    Value(f64),
    /// `h = min f + fraction * (max f - min f)` per instance.
    Fraction(f64),
}

impl ThresholdSpec {
    pub fn resolve(&self, env: &Environment) -> f64 {
        match *self {
            ThresholdSpec::Value(h) => h,
            ThresholdSpec::Fraction(q) => env.min_value() + q * (env.max_value() - env.min_value()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Smooth function built from a GP draw on random anchors.
    Synthetic {
        grid: Vec<usize>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        #[serde(default = "default_anchors")]
        anchors: usize,
        /// Fixed instance for every seed; otherwise each seed draws its own.
        instance_seed: Option<u64>,
    },
    /// Exact joint draw from the prior on the grid.
    PriorSample {
        grid: Vec<usize>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        instance_seed: Option<u64>,
    },
    /// Grid CSV with header `x1..xd,f[,noise_var][,cost]`.
    Csv { path: PathBuf },
}

fn default_anchors() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    Unit,
    Constant(f64),
    Travel,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    /// Overrides any CSV noise column.
    pub noise_var: Option<f64>,
    /// Overrides any CSV cost column.
    pub cost: Option<CostSpec>,
    /// Selectable noise levels; replaces `noise_var` and `cost`.
    pub levels: Option<Vec<NoiseLevel>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    Practical,
    Theoretical,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Truvar {
        label: Option<String>,
        beta: Option<BetaKind>,
        a: Option<f64>,
        delta: Option<f64>,
        eta_initial: Option<f64>,
        ratio: Option<f64>,
        delta_bar: Option<f64>,
        batch_size: Option<usize>,
        restrict_to_active: Option<bool>,
        monotone: Option<bool>,
        pure_variance_reduction: Option<bool>,
        eta_floor: Option<f64>,
        /// Stop once the epoch target is at most this value.
        eta_target: Option<f64>,
        level: Option<usize>,
    },
    GpUcb {
        label: Option<String>,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_divisor")]
        divisor: f64,
        level: Option<usize>,
    },
    Ei {
        label: Option<String>,
        #[serde(default)]
        use_posterior_mean: bool,
        level: Option<usize>,
    },
    Straddle {
        label: Option<String>,
        level: Option<usize>,
    },
    Var {
        label: Option<String>,
        level: Option<usize>,
    },
    Gchk {
        label: Option<String>,
        #[serde(default = "default_beta_sqrt")]
        beta_sqrt: f64,
        level: Option<usize>,
    },
}

fn default_delta() -> f64 {
    0.1
}

fn default_divisor() -> f64 {
    5.0
}

fn default_beta_sqrt() -> f64 {
    3.0
}

impl AlgorithmSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AlgorithmSpec::Truvar { .. } => "truvar",
            AlgorithmSpec::GpUcb { .. } => "gp_ucb",
            AlgorithmSpec::Ei { .. } => "ei",
            AlgorithmSpec::Straddle { .. } => "straddle",
            AlgorithmSpec::Var { .. } => "var",
            AlgorithmSpec::Gchk { .. } => "gchk",
        }
    }

    pub fn level(&self) -> Option<usize> {
        match self {
            AlgorithmSpec::Truvar { level, .. }
            | AlgorithmSpec::GpUcb { level, .. }
            | AlgorithmSpec::Ei { level, .. }
            | AlgorithmSpec::Straddle { level, .. }
            | AlgorithmSpec::Var { level, .. }
            | AlgorithmSpec::Gchk { level, .. } => *level,
        }
    }

    /// Output label: the configured one, else the kind plus any fixed level.
    pub fn label(&self) -> String {
        let explicit = match self {
            AlgorithmSpec::Truvar { label, .. }
            | AlgorithmSpec::GpUcb { label, .. }
            | AlgorithmSpec::Ei { label, .. }
            | AlgorithmSpec::Straddle { label, .. }
            | AlgorithmSpec::Var { label, .. }
            | AlgorithmSpec::Gchk { label, .. } => label.clone(),
        };
        explicit.unwrap_or_else(|| match self.level() {
            Some(k) => format!("{}_level{k}", self.kind()),
            None => self.kind().to_string(),
        })
    }

    /// TruVaR settings after applying the mode presets.
    pub fn truvar_config(&self, mode: Mode) -> Option<TruVarConfig> {
        let AlgorithmSpec::Truvar {
            beta,
            a,
            delta,
            eta_initial,
            ratio,
            delta_bar,
            batch_size,
            restrict_to_active,
            monotone,
            pure_variance_reduction,
            eta_floor,
            ..
        } = self
        else {
            return None;
        };
        let mut cfg = match mode {
            Mode::Bo => TruVarConfig::bo(),
            Mode::Lse { threshold } => TruVarConfig::lse(threshold),
        };
        match beta.unwrap_or(BetaKind::Practical) {
            BetaKind::Practical => {
                if let (Some(a), BetaRule::Practical { a: slot }) = (a, &mut cfg.beta_rule) {
                    *slot = *a;
                }
            }
            BetaKind::Theoretical => {
                cfg.beta_rule = BetaRule::Theoretical {
                    delta: delta.unwrap_or(0.1),
                };
            }
        }
        cfg.eta_initial = eta_initial.unwrap_or(cfg.eta_initial);
        cfg.ratio = ratio.unwrap_or(cfg.ratio);
        cfg.delta_bar = delta_bar.unwrap_or(cfg.delta_bar);
        cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
        cfg.restrict_to_active = restrict_to_active.unwrap_or(cfg.restrict_to_active);
        cfg.monotone = monotone.unwrap_or(cfg.monotone);
        cfg.pure_variance_reduction = pure_variance_reduction.unwrap_or(cfg.pure_variance_reduction);
        cfg.eta_floor = eta_floor.unwrap_or(cfg.eta_floor);
        Some(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub mode: ModeKind,
    pub threshold: Option<ThresholdSpec>,
    pub budget: f64,
    /// Metric checkpoints every `cadence` cost units.
    pub cadence: f64,
    pub max_steps: Option<usize>,
    /// Seeds `0..seeds`.
    pub seeds: Option<u64>,
    pub seed_list: Option<Vec<u64>>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    pub output: Option<PathBuf>,
    pub kernel: Kernel,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub observation: ObservationSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Directory the config was read from; relative CSV paths resolve here.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_config(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(toml_error)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed_values(&self) -> Vec<u64> {
        match (&self.seed_list, self.seeds) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => (0..n).collect(),
            (None, None) => vec![0],
        }
    }

    pub fn limits(&self) -> RunLimits {
        RunLimits {
            budget: self.budget,
            max_steps: self.max_steps,
            eta_target: None,
        }
    }

    /// Checkpoint costs `0, cadence, 2 cadence, ...` up to the budget.
    pub fn checkpoints(&self) -> Vec<f64> {
        let n = (self.budget / self.cadence + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.cadence).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(bad("budget", format!("must be positive and finite, got {}", self.budget)));
        }
        if !(self.cadence > 0.0 && self.cadence.is_finite()) {
            return Err(bad("cadence", format!("must be positive, got {}", self.cadence)));
        }
        if self.budget / self.cadence > 1e6 {
            return Err(bad("cadence", "more than 10^6 checkpoints"));
        }
        if self.max_steps == Some(0) {
            return Err(bad("max_steps", "must be at least 1"));
        }
        match (&self.seed_list, self.seeds) {
            (Some(_), Some(_)) => return Err(bad("seeds", "give either seeds or seed_list")),
            (Some(list), None) if list.is_empty() => return Err(bad("seed_list", "needs at least one seed")),
            (None, Some(0)) => return Err(bad("seeds", "needs at least one seed")),
            _ => {}
        }
        if let Some(list) = &self.seed_list {
            let mut seen = HashSet::new();
            if let Some(dup) = list.iter().find(|s| !seen.insert(**s)) {
                return Err(bad("seed_list", format!("seed {dup} listed twice")));
            }
        }
        for (k, &e) in self.epsilons.iter().enumerate() {
            if !(e > 0.0 && e.is_finite()) {
                return Err(bad(format!("epsilons[{k}]"), format!("must be positive, got {e}")));
            }
        }
        match (self.mode, &self.threshold) {
            (ModeKind::Lse, None) => return Err(bad("threshold", "required in lse mode")),
            (ModeKind::Bo, Some(_)) => return Err(bad("threshold", "only used in lse mode")),
            (_, Some(ThresholdSpec::Value(h))) if !h.is_finite() => {
                return Err(bad("threshold.value", "must be finite"))
            }
            (_, Some(ThresholdSpec::Fraction(q))) if !(0.0..=1.0).contains(q) => {
                return Err(bad("threshold.fraction", format!("must lie in [0, 1], got {q}")))
            }
            _ => {}
        }
        self.kernel.validate().map_err(|e| bad("kernel", e.to_string()))?;
        self.validate_environment()?;
        self.validate_observation()?;
        if self.algorithms.is_empty() {
            return Err(bad("algorithms", "needs at least one entry"));
        }
        let mut labels = HashSet::new();
        for (k, alg) in self.algorithms.iter().enumerate() {
            let path = format!("algorithms[{k}]");
            self.validate_algorithm(alg, &path)?;
            let label = alg.label();
            if label.is_empty() || label.contains(['/', '\\']) || label.starts_with('.') {
                return Err(bad(format!("{path}.label"), format!("unusable as a directory name: {label:?}")));
            }
            if !labels.insert(label.clone()) {
                return Err(bad(format!("{path}.label"), format!("duplicate label {label:?}")));
            }
        }
        Ok(())
    }

    fn validate_environment(&self) -> Result<()> {
        let (grid, lower, upper) = match &self.environment {
            EnvironmentSpec::Synthetic {
                grid,
                lower,
                upper,
                anchors,
                ..
            } => {
                if *anchors == 0 {
                    return Err(bad("environment.anchors", "must be at least 1"));
                }
                (grid, lower, upper)
            }
            EnvironmentSpec::PriorSample { grid, lower, upper, .. } => (grid, lower, upper),
            EnvironmentSpec::Csv { .. } => return Ok(()),
        };
        if grid.is_empty() {
            return Err(bad("environment.grid", "needs at least one axis"));
        }
        if grid.len() != self.kernel.dim() {
            return Err(bad(
                "environment.grid",
                format!("{} axes but the kernel has {} length scales", grid.len(), self.kernel.dim()),
            ));
        }
        if grid.iter().product::<usize>() < 2 {
            return Err(bad("environment.grid", "needs at least two points"));
        }
        if grid.iter().product::<usize>() > 20_000 {
            return Err(bad("environment.grid", "more than 20000 points"));
        }
        for (name, b) in [("lower", lower), ("upper", upper)] {
            if let Some(b) = b {
                if b.len() != grid.len() {
                    return Err(bad(format!("environment.{name}"), format!("expected {} values", grid.len())));
                }
            }
        }
        Ok(())
    }

    fn validate_observation(&self) -> Result<()> {
        let obs = &self.observation;
        if let Some(v) = obs.noise_var {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad("observation.noise_var", format!("must be non-negative, got {v}")));
            }
        }
        if let Some(CostSpec::Constant(c)) = obs.cost {
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad("observation.cost.constant", format!("must be positive, got {c}")));
            }
        }
        if let Some(levels) = &obs.levels {
            if obs.noise_var.is_some() || obs.cost.is_some() {
                return Err(bad("observation.levels", "cannot be combined with noise_var or cost"));
            }
            if levels.is_empty() {
                return Err(bad("observation.levels", "needs at least one level"));
            }
            for (k, l) in levels.iter().enumerate() {
                if !(l.variance > 0.0 && l.variance.is_finite()) {
                    return Err(bad(format!("observation.levels[{k}].variance"), "must be positive"));
                }
                if !(l.cost > 0.0 && l.cost.is_finite()) {
                    return Err(bad(format!("observation.levels[{k}].cost"), "must be positive"));
                }
            }
        }
        if obs.cost == Some(CostSpec::Travel) && self.environment_dim() != Some(2) {
            return Err(bad("observation.cost", "travel cost needs a two-dimensional domain"));
        }
        Ok(())
    }

    fn environment_dim(&self) -> Option<usize> {
        match &self.environment {
            EnvironmentSpec::Synthetic { grid, .. } | EnvironmentSpec::PriorSample { grid, .. } => Some(grid.len()),
            EnvironmentSpec::Csv { .. } => Some(self.kernel.dim()),
        }
    }

    fn num_levels(&self) -> Option<usize> {
        self.observation.levels.as_ref().map(Vec::len)
    }

    fn validate_algorithm(&self, alg: &AlgorithmSpec, path: &str) -> Result<()> {
        match (self.num_levels(), alg.level()) {
            (None, Some(_)) => return Err(bad(format!("{path}.level"), "no noise levels configured")),
            (Some(n), Some(k)) if k >= n => {
                return Err(bad(format!("{path}.level"), format!("level {k} out of range for {n} levels")))
            }
            (Some(n), None) if n > 1 && alg.kind() != "truvar" => {
                return Err(bad(
                    format!("{path}.level"),
                    format!("{} samples one noise level; choose one of {n}", alg.kind()),
                ))
            }
            _ => {}
        }
        let need = |wanted: ModeKind| -> Result<()> {
            if self.mode != wanted {
                return Err(bad(
                    format!("{path}.kind"),
                    format!("{} is not available in {:?} mode", alg.kind(), self.mode).to_lowercase(),
                ));
            }
            Ok(())
        };
        match alg {
            AlgorithmSpec::Truvar { beta, a, delta, eta_target, .. } => {
                match beta.unwrap_or(BetaKind::Practical) {
                    BetaKind::Practical if delta.is_some() => {
                        return Err(bad(format!("{path}.delta"), "only used with beta = \"theoretical\""))
                    }
                    BetaKind::Theoretical if a.is_some() => {
                        return Err(bad(format!("{path}.a"), "only used with beta = \"practical\""))
                    }
                    _ => {}
                }
                if let Some(t) = eta_target {
                    if !(*t > 0.0) {
                        return Err(bad(format!("{path}.eta_target"), "must be positive"));
                    }
                }
                let mode = match self.mode {
                    ModeKind::Bo => Mode::Bo,
                    ModeKind::Lse => Mode::Lse { threshold: 0.0 },
                };
                let cfg = alg.truvar_config(mode).expect("truvar spec");
                cfg.validate().map_err(|e| bad(path, e.to_string()))
            }
            AlgorithmSpec::GpUcb { delta, divisor, .. } => {
                need(ModeKind::Bo)?;
                truvar::baselines::GpUcb::new(*delta, *divisor).map(|_| ()).map_err(|e| bad(path, e.to_string()))
            }
            AlgorithmSpec::Ei { .. } => need(ModeKind::Bo),
            AlgorithmSpec::Straddle { .. } => need(ModeKind::Lse),
            AlgorithmSpec::Var { .. } => Ok(()),
            AlgorithmSpec::Gchk { beta_sqrt, .. } => {
                need(ModeKind::Lse)?;
                if !(*beta_sqrt > 0.0 && beta_sqrt.is_finite()) {
                    return Err(bad(format!("{path}.beta_sqrt"), "must be positive"));
                }
                Ok(())
            }
        }
    }

    fn grid_domain(grid: &[usize], lower: &Option<Vec<f64>>, upper: &Option<Vec<f64>>) -> Result<Arc<Domain>> {
        let lo = lower.clone().unwrap_or_else(|| vec![0.0; grid.len()]);
        let hi = upper.clone().unwrap_or_else(|| vec![1.0; grid.len()]);
        Domain::grid(grid, &lo, &hi)
            .map(Arc::new)
            .map_err(|e| bad("environment", e.to_string()))
    }

    /// Environment for `seed`, with the configured noise and costs applied.
    pub fn environment(&self, seed: u64) -> Result<Environment> {
        let env = match &self.environment {
            EnvironmentSpec::Synthetic {
                grid,
                lower,
                upper,
                anchors,
                instance_seed,
            } => {
                let domain = Self::grid_domain(grid, lower, upper)?;
                synth_gp_function(&self.kernel, domain, *anchors, instance_seed.unwrap_or(seed))?
            }
            EnvironmentSpec::PriorSample {
                grid,
                lower,
                upper,
                instance_seed,
            } => {
                let domain = Self::grid_domain(grid, lower, upper)?;
                prior_sample_env(&self.kernel, domain, instance_seed.unwrap_or(seed))?
            }
            EnvironmentSpec::Csv { path } => {
                let full = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.clone(),
                };
                let env = load_grid_csv(&full)?;
                if env.domain().dim() != self.kernel.dim() {
                    return Err(bad(
                        "environment.path",
                        format!(
                            "{} has {} coordinates but the kernel has {} length scales",
                            full.display(),
                            env.domain().dim(),
                            self.kernel.dim()
                        ),
                    ));
                }
                env
            }
        };
        let obs = &self.observation;
        let mut env = match obs.noise_var {
            Some(v) => env.with_noise(NoiseModel::Constant(v))?,
            None if matches!(self.environment, EnvironmentSpec::Csv { .. }) => env,
            None => env.with_noise(NoiseModel::Constant(DEFAULT_NOISE_VAR))?,
        };
        env = match &obs.cost {
            Some(CostSpec::Unit) => env.with_cost(CostModel::Constant(1.0))?,
            Some(CostSpec::Constant(c)) => env.with_cost(CostModel::Constant(*c))?,
            Some(CostSpec::Travel) => env.with_cost(CostModel::Travel)?,
            None => env,
        };
        if let Some(levels) = &obs.levels {
            let vars: Vec<f64> = levels.iter().map(|l| l.variance).collect();
            let costs: Vec<f64> = levels.iter().map(|l| l.cost).collect();
            env = env.multi_noise(&vars, &costs)?;
        }
        Ok(env)
    }
}

/// Inputs of the `bounds` subcommand, under a top-level `[bounds]` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub bounds: BoundsConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub domain_size: usize,
    pub noise_var: f64,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub delta_bar: f64,
    #[serde(default = "default_gamma")]
    pub gamma: GammaModel,
    #[serde(default)]
    pub levels: Vec<NoiseLevel>,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

fn default_gamma() -> GammaModel {
    GammaModel::FiniteDomain
}

fn default_cap() -> f64 {
    1e9
}

impl BoundsConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: BoundsFile = toml::from_str(text).map_err(toml_error)?;
        file.bounds.inputs().validate().map_err(|e| bounds_error(&e))?;
        Ok(file.bounds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_config(path)?)
    }

    pub fn inputs(&self) -> BoundInputs {
        BoundInputs {
            domain_size: self.domain_size,
            noise_var: self.noise_var,
            epsilon: self.epsilon,
            delta: self.delta,
            delta_bar: self.delta_bar,
            gamma: self.gamma.clone(),
            levels: self.levels.clone(),
            cap: self.cap,
        }
    }
}

/// Names the offending field of a bound validation message.
fn bounds_error(e: &truvar::Error) -> CliError {
    let msg = e.to_string();
    let field = ["delta_bar", "epsilon", "noise_var", "domain_size", "cap", "levels", "delta"]
        .into_iter()
        .find(|f| msg.contains(f));
    match field {
        Some(f) => bad(format!("bounds.{f}"), msg),
        None => bad("bounds", msg),
    }
}

/// Either kind of configuration file, told apart by a `[bounds]` table.
#[derive(Debug, Clone)]
pub enum AnyConfig {
    Experiment(Box<ExperimentConfig>),
    Bounds(BoundsConfig),
}

impl AnyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_config(path)?;
        let table: toml::Table = toml::from_str(&text).map_err(toml_error)?;
        if table.contains_key("bounds") {
            Ok(AnyConfig::Bounds(BoundsConfig::from_toml(&text)?))
        } else {
            Ok(AnyConfig::Experiment(Box::new(ExperimentConfig::load(path)?)))
        }
    }
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn toml_error(e: toml::de::Error) -> CliError {
    CliError::Config {
        path: "<file>".into(),
        message: e.to_string(),
    }
}
