//! Ground-truth problem instances.
//!
//! An [`Environment`] couples a finite domain with the true function values,
//! a noise model and a cost model. When a table of noise levels is attached
//! (see [`Environment::multi_noise`]) the action space becomes the product of
//! the domain with the level index; the function and kernel still act on the
//! domain coordinates only, while noise and cost depend on the level alone.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::gp::{cholesky_with_jitter, NOISE_FLOOR};
use crate::kernel::Kernel;
use crate::rng::{stream, Stream};

/// Noise variance assumed when an instance does not specify one.
pub const DEFAULT_NOISE_VAR: f64 = 1e-6;

/// A point of the domain together with the chosen noise level (0 when the
/// environment has a single level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub point: usize,
    pub level: usize,
}

impl Action {
    pub fn at(point: usize) -> Self {
        Self { point, level: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevel {
    pub variance: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Constant(f64),
    PerPoint(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    Constant(f64),
    PerPoint(Vec<f64>),
    /// [`travel_cost`] from the previously sampled point.
    Travel,
}

/// `0.25 |x_1 - x'_1| + 4 (|x_2| + 1)`: horizontal travel from the previous
/// point plus a depth-dependent measurement cost.
pub fn travel_cost(previous: &[f64], candidate: &[f64]) -> Result<f64> {
    for p in [previous, candidate] {
        if p.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: p.len(),
            });
        }
    }
    Ok(0.25 * (candidate[0] - previous[0]).abs() + 4.0 * (candidate[1].abs() + 1.0))
}

#[derive(Debug, Clone)]
pub struct Environment {
    domain: Arc<Domain>,
    truth: Vec<f64>,
    noise: NoiseModel,
    cost: CostModel,
    levels: Option<Vec<NoiseLevel>>,
}

impl Environment {
    /// Unit-cost environment with noise variance [`DEFAULT_NOISE_VAR`].
    pub fn new(domain: Arc<Domain>, truth: Vec<f64>) -> Result<Self> {
        if domain.len() < 2 {
            return Err(Error::Config(format!(
                "environment needs at least 2 points, got {}",
                domain.len()
            )));
        }
        if truth.len() != domain.len() {
            return Err(Error::DimensionMismatch {
                expected: domain.len(),
                got: truth.len(),
            });
        }
        if let Some(i) = truth.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("function value at point {i} is not finite")));
        }
        Ok(Self {
            domain,
            truth,
            noise: NoiseModel::Constant(DEFAULT_NOISE_VAR),
            cost: CostModel::Constant(1.0),
            levels: None,
        })
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        let values: &[f64] = match &noise {
            NoiseModel::Constant(v) => std::slice::from_ref(v),
            NoiseModel::PerPoint(v) => {
                if v.len() != self.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.len(),
                        got: v.len(),
                    });
                }
                v
            }
        };
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise variances must be non-negative".into()));
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn with_cost(mut self, cost: CostModel) -> Result<Self> {
        match &cost {
            CostModel::Constant(c) => check_costs(std::slice::from_ref(c))?,
            CostModel::PerPoint(v) => {
                if v.len() != self.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.len(),
                        got: v.len(),
                    });
                }
                check_costs(v)?
            }
            CostModel::Travel => {
                if self.domain.dim() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        got: self.domain.dim(),
                    });
                }
            }
        }
        self.cost = cost;
        Ok(self)
    }

    /// Product environment: every point can be sampled at any of the given
    /// noise variances, each with its own cost.
    pub fn multi_noise(self, variances: &[f64], costs: &[f64]) -> Result<Self> {
        if variances.is_empty() || variances.len() != costs.len() {
            return Err(Error::Config(format!(
                "noise level table needs equal-length non-empty lists, got {} variances and {} costs",
                variances.len(),
                costs.len()
            )));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("noise level variances must be positive".into()));
        }
        check_costs(costs)?;
        let levels = variances
            .iter()
            .zip(costs)
            .map(|(&variance, &cost)| NoiseLevel { variance, cost })
            .collect();
        Ok(Self {
            levels: Some(levels),
            ..self
        })
    }

    /// Single-level environment that always samples at level `k`.
    pub fn fixed_level(&self, k: usize) -> Result<Self> {
        let level = self.level(k)?;
        Self::new(self.domain.clone(), self.truth.clone())?
            .with_noise(NoiseModel::Constant(level.variance))?
            .with_cost(CostModel::Constant(level.cost))
    }

    fn level(&self, k: usize) -> Result<NoiseLevel> {
        match &self.levels {
            Some(levels) => levels.get(k).copied().ok_or_else(|| {
                Error::Config(format!("noise level {k} out of range ({} levels)", levels.len()))
            }),
            None => Err(Error::Config("environment has no noise level table".into())),
        }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn value(&self, i: usize) -> f64 {
        self.truth[i]
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn noise_model(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn levels(&self) -> Option<&[NoiseLevel]> {
        self.levels.as_deref()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.as_ref().map_or(1, Vec::len)
    }

    /// Size of the action space `|D_0| * K`.
    pub fn num_actions(&self) -> usize {
        self.len() * self.num_levels()
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        let k = self.num_levels();
        (0..self.len()).flat_map(move |point| (0..k).map(move |level| Action { point, level }))
    }

    pub fn check_action(&self, action: Action) -> Result<()> {
        self.domain.check_index(action.point)?;
        if action.level >= self.num_levels() {
            return Err(Error::Config(format!(
                "noise level {} out of range ({} levels)",
                action.level,
                self.num_levels()
            )));
        }
        Ok(())
    }

    /// Declared noise variance for an action.
    pub fn declared_noise_var(&self, action: Action) -> f64 {
        if let Some(levels) = &self.levels {
            return levels[action.level].variance;
        }
        match &self.noise {
            NoiseModel::Constant(v) => *v,
            NoiseModel::PerPoint(v) => v[action.point],
        }
    }

    /// Noise variance used for sampling and inference (floored).
    pub fn noise_var(&self, action: Action) -> f64 {
        self.declared_noise_var(action).max(NOISE_FLOOR)
    }

    /// Cost of `action` when the previously sampled point is `previous`.
    /// Travel costs treat a missing previous point as zero travel.
    pub fn cost(&self, previous: Option<usize>, action: Action) -> f64 {
        if let Some(levels) = &self.levels {
            return levels[action.level].cost;
        }
        match &self.cost {
            CostModel::Constant(c) => *c,
            CostModel::PerPoint(c) => c[action.point],
            CostModel::Travel => {
                let cand = self.domain.point(action.point);
                let prev = previous.map_or(cand, |p| self.domain.point(p));
                0.25 * (cand[0] - prev[0]).abs() + 4.0 * (cand[1].abs() + 1.0)
            }
        }
    }

    /// Smallest cost any action can incur.
    pub fn min_cost(&self) -> f64 {
        if let Some(levels) = &self.levels {
            return levels.iter().map(|l| l.cost).fold(f64::INFINITY, f64::min);
        }
        match &self.cost {
            CostModel::Constant(c) => *c,
            CostModel::PerPoint(c) => c.iter().copied().fold(f64::INFINITY, f64::min),
            CostModel::Travel => self
                .domain
                .iter()
                .map(|p| 4.0 * (p[1].abs() + 1.0))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Largest cost any action can incur.
    pub fn max_cost(&self) -> f64 {
        if let Some(levels) = &self.levels {
            return levels.iter().map(|l| l.cost).fold(0.0, f64::max);
        }
        match &self.cost {
            CostModel::Constant(c) => *c,
            CostModel::PerPoint(c) => c.iter().copied().fold(0.0, f64::max),
            CostModel::Travel => {
                let (lo, hi) = self.domain.bounds();
                let depth = self
                    .domain
                    .iter()
                    .map(|p| p[1].abs())
                    .fold(0.0, f64::max);
                0.25 * (hi[0] - lo[0]) + 4.0 * (depth + 1.0)
            }
        }
    }

    /// Noisy sample `f(x) + z`, `z ~ N(0, sigma^2(x))`; consumes one normal
    /// draw from `rng`.
    pub fn observe<R: Rng + ?Sized>(&self, action: Action, rng: &mut R) -> Result<f64> {
        self.check_action(action)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.truth[action.point] + self.noise_var(action).sqrt() * z)
    }

    pub fn max_value(&self) -> f64 {
        self.truth.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.truth.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// All indices attaining the maximum value.
    pub fn maximizers(&self) -> Vec<usize> {
        let best = self.max_value();
        (0..self.len()).filter(|&i| self.truth[i] == best).collect()
    }
}

fn check_costs(costs: &[f64]) -> Result<()> {
    if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::Config("costs must be positive".into()));
    }
    Ok(())
}

/// A function drawn from a GP by sampling values at random anchor points and
/// taking the noiseless posterior mean `f(x) = sum_j w_j k(x, a_j)`.
#[derive(Debug, Clone)]
pub struct GpSample {
    kernel: Kernel,
    anchors: Domain,
    anchor_values: Vec<f64>,
    weights: DVector<f64>,
}

impl GpSample {
    /// Anchors uniform on the box `[lower, upper]`, values from the joint prior.
    pub fn draw<R: Rng + ?Sized>(
        kernel: &Kernel,
        n_anchor: usize,
        lower: &[f64],
        upper: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if n_anchor == 0 {
            return Err(Error::Config("need at least one anchor point".into()));
        }
        let dim = kernel.dim();
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: lower.len(),
            });
        }
        let mut coords = Vec::with_capacity(n_anchor * dim);
        for _ in 0..n_anchor {
            for k in 0..dim {
                let u: f64 = rng.random();
                coords.push(lower[k] + (upper[k] - lower[k]) * u);
            }
        }
        let anchors = Domain::new(dim, coords)?;
        let z = DVector::from_iterator(n_anchor, (0..n_anchor).map(|_| rng.sample(StandardNormal)));
        let (chol, _) = cholesky_with_jitter(&kernel.gram(&anchors)?)?;
        let l = chol.unpack();
        let values = &l * &z;
        // (L L^T)^{-1} L z = L^{-T} z
        let weights = l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Numerical("singular anchor factor".into()))?;
        Ok(Self {
            kernel: kernel.clone(),
            anchors,
            anchor_values: values.iter().copied().collect(),
            weights,
        })
    }

    pub fn anchors(&self) -> &Domain {
        &self.anchors
    }

    pub fn anchor_values(&self) -> &[f64] {
        &self.anchor_values
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(self.weights.iter())
            .map(|(a, w)| w * self.kernel.eval_unchecked(x, a))
            .sum()
    }

    pub fn eval_domain(&self, domain: &Domain) -> Vec<f64> {
        domain.iter().map(|p| self.eval(p)).collect()
    }
}

/// Synthetic environment whose truth is a [`GpSample`] with `n_anchor`
/// anchors over the grid's bounding box; deterministic in `seed`.
pub fn synth_gp_function(
    kernel: &Kernel,
    grid: Arc<Domain>,
    n_anchor: usize,
    seed: u64,
) -> Result<Environment> {
    kernel.check_domain(&grid)?;
    let (lo, hi) = grid.bounds();
    let mut rng = stream(seed, Stream::Instance);
    let sample = GpSample::draw(kernel, n_anchor, &lo, &hi, &mut rng)?;
    let truth = sample.eval_domain(&grid);
    Environment::new(grid, truth)
}

/// Joint draw of the prior at every domain point.
pub fn sample_prior<R: Rng + ?Sized>(kernel: &Kernel, domain: &Domain, rng: &mut R) -> Result<Vec<f64>> {
    let (chol, _) = cholesky_with_jitter(&kernel.gram(domain)?)?;
    let n = domain.len();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)));
    let l: DMatrix<f64> = chol.unpack();
    Ok((l * z).iter().copied().collect())
}

/// Environment whose truth is a joint prior draw on `domain`.
pub fn prior_sample_env(kernel: &Kernel, domain: Arc<Domain>, seed: u64) -> Result<Environment> {
    let mut rng = stream(seed, Stream::Instance);
    let truth = sample_prior(kernel, &domain, &mut rng)?;
    Environment::new(domain, truth)
}

/// Reads a grid file: header `x1,...,xd,f[,noise_var][,cost]`. Points are
/// sorted lexicographically so indices do not depend on row order.
pub fn read_grid_csv<R: Read>(reader: R) -> Result<Environment> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let f_col = headers
        .iter()
        .position(|h| h == "f")
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "header has no `f` column".into(),
        })?;
    if f_col == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs coordinate columns x1..xd before `f`".into(),
        });
    }
    for (k, h) in headers[..f_col].iter().enumerate() {
        if *h != format!("x{}", k + 1) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column `x{}`, found `{h}`", k + 1),
            });
        }
    }
    let extra = &headers[f_col + 1..];
    let (noise_col, cost_col) = match extra.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        [] => (None, None),
        ["noise_var"] => (Some(f_col + 1), None),
        ["cost"] => (None, Some(f_col + 1)),
        ["noise_var", "cost"] => (Some(f_col + 1), Some(f_col + 2)),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected trailing columns {extra:?}"),
            })
        }
    };
    let dim = f_col;

    struct Row {
        line: usize,
        coords: Vec<f64>,
        f: f64,
        noise: Option<f64>,
        cost: Option<f64>,
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let parse = |col: usize| -> Result<f64> {
            let v: f64 = rec[col].parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse `{}` in column `{}`", &rec[col], headers[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    line,
                    column: headers[col].clone(),
                });
            }
            Ok(v)
        };
        let coords = (0..dim).map(parse).collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            line,
            coords,
            f: parse(f_col)?,
            noise: noise_col.map(parse).transpose()?,
            cost: cost_col.map(parse).transpose()?,
        });
    }
    rows.sort_by(|a, b| {
        a.coords
            .iter()
            .zip(&b.coords)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for w in rows.windows(2) {
        if w[0].coords == w[1].coords {
            let (first, line) = if w[0].line < w[1].line {
                (w[0].line, w[1].line)
            } else {
                (w[1].line, w[0].line)
            };
            return Err(Error::DuplicatePoint { line, first });
        }
    }

    let coords = rows.iter().flat_map(|r| r.coords.iter().copied()).collect();
    let domain = Arc::new(Domain::new(dim, coords)?);
    let mut env = Environment::new(domain, rows.iter().map(|r| r.f).collect())?;
    if noise_col.is_some() {
        env = env.with_noise(NoiseModel::PerPoint(
            rows.iter().map(|r| r.noise.unwrap_or_default()).collect(),
        ))?;
    }
    if cost_col.is_some() {
        env = env.with_cost(CostModel::PerPoint(
            rows.iter().map(|r| r.cost.unwrap_or_default()).collect(),
        ))?;
    }
    Ok(env)
}

pub fn load_grid_csv(path: impl AsRef<Path>) -> Result<Environment> {
    read_grid_csv(std::fs::File::open(path)?)
}

/// Writes the grid format read by [`read_grid_csv`]. Per-point noise and cost
/// columns are emitted only when the environment has per-point tables.
pub fn write_grid_csv_to<W: Write>(env: &Environment, writer: W) -> Result<()> {
    if env.levels.is_some() {
        return Err(Error::Config(
            "multi-noise environments have no grid file representation".into(),
        ));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=env.domain.dim()).map(|k| format!("x{k}")).collect();
    header.push("f".into());
    let noise = match &env.noise {
        NoiseModel::PerPoint(v) => Some(v),
        NoiseModel::Constant(_) => None,
    };
    let cost = match &env.cost {
        CostModel::PerPoint(v) => Some(v),
        _ => None,
    };
    if noise.is_some() {
        header.push("noise_var".into());
    }
    if cost.is_some() {
        header.push("cost".into());
    }
    wtr.write_record(&header)?;
    for (i, p) in env.domain.iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(|c| c.to_string()).collect();
        rec.push(env.truth[i].to_string());
        if let Some(v) = noise {
            rec.push(v[i].to_string());
        }
        if let Some(v) = cost {
            rec.push(v[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_grid_csv(env: &Environment, path: impl AsRef<Path>) -> Result<()> {
    write_grid_csv_to(env, std::fs::File::create(path)?)
}
