//! Pearson correlation between per-model peak AvgU and downstream scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use repstat_core::report::{SweepKind, SweepReport};
use repstat_core::LabelKey;

/// Largest sample size whose permutations are enumerated exhaustively.
pub const EXHAUSTIVE_MAX_N: usize = 8;
pub const SAMPLED_PERMUTATIONS: usize = 100_000;

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("inputs have different lengths ({x} and {y})")]
    Length { x: usize, y: usize },
    #[error("need at least 3 pairs, got {0}")]
    TooFew(usize),
    #[error("{0} is constant")]
    Constant(&'static str),
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("only {common} models are in both the sweeps and the table")]
    TooFewModels { common: usize },
    #[error("label {0} has no downstream task")]
    NoTask(LabelKey),
    #[error("downstream table row {row}: {reason}")]
    Table { row: usize, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    /// Two-sided p-value from Student's t with `n - 2` degrees of freedom.
    pub p_t: f64,
    /// Two-sided permutation p-value on `|r|`.
    pub p_perm: f64,
    /// Whether `p_perm` enumerated every permutation.
    pub exhaustive: bool,
    pub n: usize,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::Length { x: x.len(), y: y.len() });
    }
    if x.len() < 3 {
        return Err(CorrelationError::TooFew(x.len()));
    }
    for (v, name) in [(x, "x"), (y, "y")] {
        if v.iter().any(|a| !a.is_finite()) {
            return Err(CorrelationError::NonFinite(name));
        }
        if v.iter().all(|&a| a == v[0]) {
            return Err(CorrelationError::Constant(name));
        }
    }
    Ok(())
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| a - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check(x, y)?;
    let (xc, yc) = (centered(x), centered(y));
    Ok((dot(&xc, &yc) / (dot(&xc, &xc) * dot(&yc, &yc)).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under the null of no correlation.
pub fn t_test_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

/// Calls `f` on every permutation of `v` (Heap's algorithm).
fn for_each_permutation(v: &mut [f64], mut f: impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    f(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            f(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Permutation p-value for `|r|`: exact over all `n!` orderings of `y`
/// when `n <= EXHAUSTIVE_MAX_N`, else `(hits + 1) / (B + 1)` over `B`
/// seeded shuffles.
pub fn permutation_p(x: &[f64], y: &[f64], seed: u64) -> Result<(f64, bool), CorrelationError> {
    check(x, y)?;
    let (xc, mut yc) = (centered(x), centered(y));
    let norm = (dot(&xc, &xc) * dot(&yc, &yc)).sqrt();
    let observed = (dot(&xc, &yc) / norm).abs();
    let hit = |perm: &[f64]| (dot(&xc, perm) / norm).abs() >= observed - 1e-12;
    if x.len() <= EXHAUSTIVE_MAX_N {
        let (mut hits, mut total) = (0u64, 0u64);
        for_each_permutation(&mut yc, |p| {
            total += 1;
            hits += hit(p) as u64;
        });
        Ok((hits as f64 / total as f64, true))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0u64;
        for _ in 0..SAMPLED_PERMUTATIONS {
            yc.shuffle(&mut rng);
            hits += hit(&yc) as u64;
        }
        Ok(((hits + 1) as f64 / (SAMPLED_PERMUTATIONS + 1) as f64, false))
    }
}

pub fn pearson(x: &[f64], y: &[f64], seed: u64) -> Result<CorrelationResult, CorrelationError> {
    let r = pearson_r(x, y)?;
    let (p_perm, exhaustive) = permutation_p(x, y, seed)?;
    Ok(CorrelationResult {
        r,
        p_t: t_test_p(r, x.len()),
        p_perm,
        exhaustive,
        n: x.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    PhoneRecognition,
    SpeakerId,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::PhoneRecognition => "phone_recognition",
            Task::SpeakerId => "speaker_id",
        }
    }

    pub fn for_label(key: LabelKey) -> Option<Self> {
        match key {
            LabelKey::Phone => Some(Task::PhoneRecognition),
            LabelKey::Speaker => Some(Task::SpeakerId),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phone_recognition" => Ok(Task::PhoneRecognition),
            "speaker_id" => Ok(Task::SpeakerId),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

/// Downstream scores keyed by `(model, task)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DownstreamTable {
    pub scores: BTreeMap<(String, Task), f64>,
}

impl DownstreamTable {
    /// Parses CSV with header `model,task,score`.
    pub fn from_csv(text: &str) -> Result<Self, CorrelationError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| CorrelationError::Table {
            row: 0,
            reason: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != ["model", "task", "score"] {
            return Err(CorrelationError::Table {
                row: 0,
                reason: "header must be model,task,score".into(),
            });
        }
        let mut scores = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let bad = |reason: String| CorrelationError::Table { row, reason };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let task: Task = rec[1].parse().map_err(bad)?;
            let score: f64 = rec[2].parse().map_err(|_| bad(format!("bad score {:?}", &rec[2])))?;
            if !score.is_finite() {
                return Err(bad("score is not finite".into()));
            }
            if scores.insert((rec[0].to_string(), task), score).is_some() {
                return Err(bad(format!("duplicate entry for {} {task}", &rec[0])));
            }
        }
        Ok(Self { scores })
    }

    pub fn read(path: &Path) -> Result<Self, CorrelationError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorrelationError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamCorrelation {
    pub result: CorrelationResult,
    /// Paired models in name order, with their peak AvgU and score.
    pub models: Vec<(String, f64, f64)>,
    /// Swept models absent from the table.
    pub missing: Vec<String>,
}

/// Peak AvgU over layers per model for `key`, ignoring normalization
/// deltas and CKA reports.
pub fn peak_avg_u(sweeps: &[SweepReport], key: LabelKey) -> BTreeMap<String, f64> {
    let mut peaks: BTreeMap<String, f64> = BTreeMap::new();
    for r in sweeps
        .iter()
        .filter(|s| s.kind == SweepKind::AvgU)
        .flat_map(|s| &s.rows)
        .filter(|r| r.label == key.as_str() && !r.metric.contains("delta"))
    {
        let e = peaks.entry(r.model.clone()).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.value);
    }
    peaks
}

pub fn correlate_downstream(
    sweeps: &[SweepReport],
    table: &DownstreamTable,
    key: LabelKey,
    seed: u64,
) -> Result<DownstreamCorrelation, CorrelationError> {
    let task = Task::for_label(key).ok_or(CorrelationError::NoTask(key))?;
    let peaks = peak_avg_u(sweeps, key);
    let mut models = Vec::new();
    let mut missing = Vec::new();
    for (model, peak) in &peaks {
        match table.scores.get(&(model.clone(), task)) {
            Some(&score) => models.push((model.clone(), *peak, score)),
            None => missing.push(model.clone()),
        }
    }
    if models.len() < 3 {
        return Err(CorrelationError::TooFewModels { common: models.len() });
    }
    let x: Vec<f64> = models.iter().map(|m| m.1).collect();
    let y: Vec<f64> = models.iter().map(|m| m.2).collect();
    Ok(DownstreamCorrelation {
        result: pearson(&x, &y, seed)?,
        models,
        missing,
    })
}

/// Models named in the table for `task`.
pub fn table_models(table: &DownstreamTable, task: Task) -> BTreeSet<&str> {
    table
        .scores
        .keys()
        .filter(|(_, t)| *t == task)
        .map(|(m, _)| m.as_str())
        .collect()
}
