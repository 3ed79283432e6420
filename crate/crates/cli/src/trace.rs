//! Per-run trace files: step rows and cost-cadence metric checkpoints.
//!
//! Both files start with the `# truvar-trace v1` version line followed by
//! `# key=value` metadata lines and a CSV header.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use truvar::metrics::{eps_accuracy, f1_score, reported_regret};
use truvar::run::Snapshot;
use truvar::{Environment, Mode, StepRecord};

use crate::error::{CliError, Result};

pub const VERSION_LINE: &str = "# truvar-trace v1";

pub const STEP_COLUMNS: [&str; 15] = [
    "t",
    "point",
    "level",
    "cost",
    "cumulative_cost",
    "y",
    "m_size",
    "h_size",
    "l_size",
    "epoch",
    "eta",
    "beta",
    "score",
    "truncated_gain",
    "untruncated_gain",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    F1,
    Regret,
}

impl MetricKind {
    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Bo => MetricKind::Regret,
            Mode::Lse { .. } => MetricKind::F1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::Regret => "regret",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    /// Cadence boundary.
    pub checkpoint: f64,
    /// Cost actually spent when the row was taken.
    pub cumulative_cost: f64,
    pub t: usize,
    pub metric: f64,
    /// The run ended before crossing the boundary; values are final-state.
    pub filled: bool,
    /// One flag per configured epsilon; `None` for rules without sets.
    pub eps: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Evaluation {
    cumulative_cost: f64,
    t: usize,
    metric: f64,
    eps: Vec<Option<bool>>,
}

/// Collects checkpoint rows from run snapshots: a row for each boundary at
/// the first snapshot whose cumulative cost reaches it.
pub struct CheckpointRecorder<'a> {
    env: &'a Environment,
    mode: Mode,
    epsilons: &'a [f64],
    boundaries: Vec<f64>,
    rows: Vec<CheckpointRow>,
    last: Option<Evaluation>,
}

impl<'a> CheckpointRecorder<'a> {
    pub fn new(env: &'a Environment, mode: Mode, epsilons: &'a [f64], boundaries: Vec<f64>) -> Self {
        Self {
            env,
            mode,
            epsilons,
            boundaries,
            rows: Vec::new(),
            last: None,
        }
    }

    fn evaluate(&self, snap: &Snapshot<'_>) -> Evaluation {
        let metric = match self.mode {
            Mode::Bo => reported_regret(snap.posterior, self.env),
            Mode::Lse { threshold } => f1_score(snap.posterior, self.env, threshold),
        };
        let eps = self
            .epsilons
            .iter()
            .map(|&e| snap.sets.map(|s| eps_accuracy(self.env, s, self.mode, e).holds))
            .collect();
        Evaluation {
            cumulative_cost: snap.cumulative_cost,
            t: snap.t,
            metric,
            eps,
        }
    }

    pub fn observe(&mut self, snap: &Snapshot<'_>) {
        let eval = self.evaluate(snap);
        while let Some(&b) = self.boundaries.get(self.rows.len()) {
            if snap.cumulative_cost < b - 1e-9 * b.max(1.0) {
                break;
            }
            self.rows.push(CheckpointRow {
                checkpoint: b,
                cumulative_cost: eval.cumulative_cost,
                t: eval.t,
                metric: eval.metric,
                filled: false,
                eps: eval.eps.clone(),
            });
        }
        self.last = Some(eval);
    }

    /// Remaining boundaries take the last observed state, flagged as filled.
    pub fn finish(mut self) -> Vec<CheckpointRow> {
        if let Some(last) = self.last.take() {
            for &b in &self.boundaries[self.rows.len()..] {
                self.rows.push(CheckpointRow {
                    checkpoint: b,
                    cumulative_cost: last.cumulative_cost,
                    t: last.t,
                    metric: last.metric,
                    filled: true,
                    eps: last.eps.clone(),
                });
            }
        }
        self.rows
    }
}

/// Run-level metadata written as comment lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta(pub BTreeMap<String, String>);

impl TraceMeta {
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string().replace(['\n', '\r'], " "));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn write(&self, out: &mut String) {
        out.push_str(VERSION_LINE);
        out.push('\n');
        for (k, v) in &self.0 {
            out.push_str(&format!("# {k}={v}\n"));
        }
    }
}

/// Shortest round-trip form, with an exponent for very small or large values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn render_steps(meta: &TraceMeta, steps: &[StepRecord]) -> String {
    let mut out = String::new();
    meta.write(&mut out);
    out.push_str(&STEP_COLUMNS.join(","));
    out.push('\n');
    for s in steps {
        let fields = [
            s.t.to_string(),
            s.point.to_string(),
            s.level.to_string(),
            num(s.cost),
            num(s.cumulative_cost),
            num(s.y),
            s.m_size.to_string(),
            s.h_size.to_string(),
            s.l_size.to_string(),
            opt(s.epoch),
            opt(s.eta.map(num)),
            opt(s.beta.map(num)),
            num(s.score),
            opt(s.truncated_gain.map(num)),
            opt(s.untruncated_gain.map(num)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn render_metrics(meta: &TraceMeta, epsilons: &[f64], rows: &[CheckpointRow]) -> String {
    let mut out = String::new();
    meta.write(&mut out);
    let mut header = vec!["checkpoint".to_string(), "cumulative_cost".into(), "t".into(), "metric".into(), "filled".into()];
    header.extend(epsilons.iter().map(|e| format!("eps_{}", num(*e))));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let mut fields = vec![
            num(r.checkpoint),
            num(r.cumulative_cost),
            r.t.to_string(),
            num(r.metric),
            r.filled.to_string(),
        ];
        fields.extend(r.eps.iter().map(|&e| opt(e)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the same directory and renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(contents.as_bytes()).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn steps_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.steps.csv"))
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.metrics.csv"))
}

/// A parsed trace file: metadata plus the header and raw fields of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub meta: TraceMeta,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TraceFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| CliError::Trace {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(VERSION_LINE) {
            return Err(format!("missing version line {VERSION_LINE:?}"));
        }
        let mut meta = TraceMeta::default();
        let mut header = None;
        for line in lines.by_ref() {
            match line.strip_prefix("# ") {
                Some(kv) => {
                    let (k, v) = kv.split_once('=').ok_or_else(|| format!("malformed metadata line {line:?}"))?;
                    meta.0.insert(k.to_string(), v.to_string());
                }
                None => {
                    header = Some(line);
                    break;
                }
            }
        }
        let columns: Vec<String> = header
            .ok_or("missing column header")?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let fields: Vec<String> = line.split(',').map(str::to_string).collect();
            if fields.len() != columns.len() {
                return Err(format!(
                    "row {} has {} fields, expected {}",
                    k + 1,
                    fields.len(),
                    columns.len()
                ));
            }
            rows.push(fields);
        }
        Ok(Self { meta, columns, rows })
    }

    pub fn column(&self, name: &str) -> std::result::Result<usize, String> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| format!("missing column {name:?}"))
    }

    /// Numeric column; empty fields are errors.
    pub fn floats(&self, name: &str) -> std::result::Result<Vec<f64>, String> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[c].parse::<f64>()
                    .map_err(|e| format!("row {} column {name}: {e}", k + 1))
            })
            .collect()
    }
}
