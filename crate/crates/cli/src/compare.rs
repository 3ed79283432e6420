//! Paired comparison of trace sets on aligned checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{CliError, Result};
use crate::experiment::mean;
use crate::trace::{num, TraceFile, VERSION_LINE};

/// Metric checkpoints of one algorithm over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub label: String,
    pub metric: String,
    pub checkpoints: Vec<f64>,
    /// Seed -> metric per checkpoint.
    pub values: BTreeMap<u64, Vec<f64>>,
}

impl TraceSet {
    /// Reads every `seed_*.metrics.csv` in `dir`; failed runs are errors.
    pub fn load(dir: &Path) -> Result<Self> {
        let io = |source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(io)?;
        files.retain(|p| p.to_string_lossy().ends_with(".metrics.csv"));
        files.sort();
        if files.is_empty() {
            return Err(CliError::Trace {
                path: dir.to_path_buf(),
                message: "no metrics traces found".into(),
            });
        }
        let mut set: Option<TraceSet> = None;
        for path in files {
            let file = TraceFile::read(&path)?;
            let err = |message: String| CliError::Trace {
                path: path.clone(),
                message,
            };
            if file.meta.get("status") != Some("complete") {
                return Err(err(format!(
                    "run did not complete: {}",
                    file.meta.get("error").unwrap_or("status missing")
                )));
            }
            let seed: u64 = file
                .meta
                .get("seed")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("missing seed".into()))?;
            let label = file.meta.get("algorithm").unwrap_or("").to_string();
            let metric = file.meta.get("metric").unwrap_or("").to_string();
            let checkpoints = file.floats("checkpoint").map_err(err)?;
            let values = file.floats("metric").map_err(err)?;
            let set = set.get_or_insert_with(|| TraceSet {
                label: label.clone(),
                metric: metric.clone(),
                checkpoints: checkpoints.clone(),
                values: BTreeMap::new(),
            });
            if set.label != label || set.metric != metric {
                return Err(err(format!("mixes {} / {} with {label} / {metric}", set.label, set.metric)));
            }
            if set.checkpoints != checkpoints {
                return Err(CliError::Alignment(format!(
                    "{} has checkpoints differing from the rest of {}",
                    path.display(),
                    dir.display()
                )));
            }
            set.values.insert(seed, values);
        }
        Ok(set.expect("at least one file"))
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.checkpoints.len())
            .map(|k| mean(&self.values.values().map(|v| v[k]).collect::<Vec<_>>()))
            .collect()
    }
}

/// Two-sided sign test on `wins` against `losses` (ties dropped); 1 when
/// there are no untied pairs.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
    (2.0 * binom.cdf(wins.min(losses) as u64)).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDelta {
    /// Mean of `other - base` over seeds.
    pub mean_delta: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub sign_p: f64,
}

/// Deltas of `other` against `base` per checkpoint; wins count seeds where
/// `other` is larger.
pub fn paired_deltas(base: &TraceSet, other: &TraceSet) -> Result<Vec<PairedDelta>> {
    if base.checkpoints != other.checkpoints {
        return Err(CliError::Alignment(format!(
            "{} has {} checkpoints up to {}, {} has {} up to {}",
            base.label,
            base.checkpoints.len(),
            base.checkpoints.last().copied().unwrap_or(0.0),
            other.label,
            other.checkpoints.len(),
            other.checkpoints.last().copied().unwrap_or(0.0)
        )));
    }
    if base.metric != other.metric {
        return Err(CliError::Alignment(format!(
            "metric {} vs {}",
            base.metric, other.metric
        )));
    }
    if !base.values.keys().eq(other.values.keys()) {
        return Err(CliError::Alignment(format!(
            "{} and {} were run on different seeds",
            base.label, other.label
        )));
    }
    Ok((0..base.checkpoints.len())
        .map(|k| {
            let deltas: Vec<f64> = base
                .values
                .iter()
                .map(|(seed, b)| other.values[seed][k] - b[k])
                .collect();
            let wins = deltas.iter().filter(|&&d| d > 0.0).count();
            let losses = deltas.iter().filter(|&&d| d < 0.0).count();
            PairedDelta {
                mean_delta: mean(&deltas),
                wins,
                losses,
                ties: deltas.len() - wins - losses,
                sign_p: sign_test_p(wins, losses),
            }
        })
        .collect())
}

/// Table with one row per checkpoint: each set's mean, then the paired
/// deltas of every later set against the first.
pub fn compare(sets: &[TraceSet]) -> Result<String> {
    let Some(base) = sets.first() else {
        return Err(CliError::Config {
            path: "compare".into(),
            message: "needs at least one trace directory".into(),
        });
    };
    let names: Vec<String> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if sets[..i].iter().any(|o| o.label == s.label) {
                format!("{}_{i}", s.label)
            } else {
                s.label.clone()
            }
        })
        .collect();
    let deltas = sets[1..]
        .iter()
        .map(|s| paired_deltas(base, s))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<Vec<f64>> = sets.iter().map(TraceSet::means).collect();

    let mut out = format!("{VERSION_LINE}\n# metric={}\n# base={}\ncheckpoint", base.metric, names[0]);
    for n in &names {
        out.push_str(&format!(",{n}_mean"));
    }
    for n in &names[1..] {
        out.push_str(&format!(",{n}_delta,{n}_wins,{n}_losses,{n}_ties,{n}_sign_p"));
    }
    out.push('\n');
    for (k, cp) in base.checkpoints.iter().enumerate() {
        out.push_str(&num(*cp));
        for m in &means {
            out.push_str(&format!(",{}", num(m[k])));
        }
        for d in &deltas {
            let d = &d[k];
            out.push_str(&format!(
                ",{},{},{},{},{}",
                num(d.mean_delta),
                d.wins,
                d.losses,
                d.ties,
                num(d.sign_p)
            ));
        }
        out.push('\n');
    }
    Ok(out)
}
