//! Multivariate Wilcoxon-Mann-Whitney class-clustering statistic.
//!
//! For a point `x` with `n1` other same-class points and `n2` points of
//! other classes, all `N - 1` other points are ranked by distance to `x`
//! (ascending, average ranks for ties). With `R1`, `R2` the rank sums of
//! the two groups and `U1' = R1 - n1(n1+1)/2`, `U2' = R2 - n2(n2+1)/2`,
//!
//! ```text
//! U_x = max(U1', U2') / (n1 n2)
//! ```
//!
//! AvgU is the mean of `U_x` over every point whose class has another
//! member. Ranks are kept doubled so all sums are exact integers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cka::dot;
use crate::par;
use crate::pool::{zscore, PoolError};
use crate::report::{SweepKind, SweepReport, SweepRow};
use crate::types::{LabelKey, LayerStack, PooledMatrix};

/// Largest input accepted by the cubic-time oracle.
pub const ORACLE_MAX_POINTS: usize = 2000;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("row {0} has zero norm; cosine distance is undefined")]
    ZeroRow(usize),
    #[error("row {0} has a non-finite value")]
    NonFinite(usize),
    #[error("only one class present")]
    SingleClass,
    #[error("every point is in a singleton class")]
    AllSkipped,
    #[error("{labels} labels for {points} points")]
    LabelCount { labels: usize, points: usize },
    #[error("oracle is limited to {max} points, got {n}")]
    OracleTooLarge { n: usize, max: usize },
    #[error("layer {0} is constant in every column")]
    ConstantLayer(usize),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(format!("unknown distance metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DistanceSpec {
    pub metric: Metric,
}

impl DistanceSpec {
    pub fn new(metric: Metric) -> Self {
        Self { metric }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointU {
    pub index: usize,
    pub u: f64,
    /// `U2' / (n1 n2)`: the fraction of (same, other) pairs where the
    /// same-class point is closer, ties counted half.
    pub closeness: f64,
    pub n1: usize,
    pub n2: usize,
    /// `2 U1'` and `2 U2'`, exact.
    pub u1_twice: u64,
    pub u2_twice: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UResult {
    pub avg_u: f64,
    /// Mean of [`PointU::closeness`].
    pub avg_closeness: f64,
    pub per_point: Vec<PointU>,
    pub per_class: BTreeMap<String, f64>,
    /// Points in classes of size one.
    pub skipped: usize,
}

/// Distances from row `i` to every row; entry `i` is 0.
struct Distances<'a> {
    data: &'a [f64],
    cols: usize,
    metric: Metric,
    norms: Vec<f64>,
}

impl<'a> Distances<'a> {
    fn new(x: &'a PooledMatrix, spec: &DistanceSpec) -> Result<Self, ClusterError> {
        if x.rows() < 2 {
            return Err(ClusterError::TooFewPoints(x.rows()));
        }
        if let Some(r) = (0..x.rows()).find(|&r| x.row(r).iter().any(|v| !v.is_finite())) {
            return Err(ClusterError::NonFinite(r));
        }
        let norms = match spec.metric {
            Metric::Euclidean => Vec::new(),
            Metric::Cosine => {
                let norms: Vec<f64> = (0..x.rows()).map(|r| dot(x.row(r), x.row(r)).sqrt()).collect();
                if let Some(r) = norms.iter().position(|&n| n == 0.0) {
                    return Err(ClusterError::ZeroRow(r));
                }
                norms
            }
        };
        Ok(Self {
            data: x.data(),
            cols: x.cols(),
            metric: spec.metric,
            norms,
        })
    }

    fn n(&self) -> usize {
        self.data.len() / self.cols.max(1)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.row(i), self.row(j));
        match self.metric {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => (1.0 - dot(a, b) / (self.norms[i] * self.norms[j])).max(0.0),
        }
    }

    fn row_into(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.n()).map(|j| self.pair(i, j)));
    }
}

/// Full `N x N` row-major distance matrix.
pub fn distance_matrix(x: &PooledMatrix, spec: &DistanceSpec) -> Result<Vec<f64>, ClusterError> {
    let d = Distances::new(x, spec)?;
    Ok(par::map_indexed(d.n(), |i| {
        let mut row = Vec::new();
        d.row_into(i, &mut row);
        row
    })
    .concat())
}

fn finish_point(index: usize, n1: usize, n2: usize, u1_twice: u64, u2_twice: u64) -> PointU {
    let denom = 2.0 * (n1 * n2) as f64;
    PointU {
        index,
        u: u1_twice.max(u2_twice) as f64 / denom,
        closeness: u2_twice as f64 / denom,
        n1,
        n2,
        u1_twice,
        u2_twice,
    }
}

/// Doubled average ranks (1-based) of `values`, ties sharing the mean rank.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let v = values[order[start]];
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == v {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end; doubled mean is their sum
        let twice = (start + 1 + end) as u64;
        for &k in &order[start..end] {
            ranks[k] = twice;
        }
        start = end;
    }
    ranks
}

/// Rank-based `U_x` from distances `row` (entry `i` ignored).
fn u_from_row(row: &[f64], classes: &[usize], i: usize) -> Option<PointU> {
    let others: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    let values: Vec<f64> = others.iter().map(|&j| row[j]).collect();
    let ranks = doubled_ranks(&values);
    let (mut r1, mut n1) = (0u64, 0usize);
    for (k, &j) in others.iter().enumerate() {
        if classes[j] == classes[i] {
            r1 += ranks[k];
            n1 += 1;
        }
    }
    let n2 = others.len() - n1;
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let total: u64 = ranks.iter().sum();
    let (n1u, n2u) = (n1 as u64, n2 as u64);
    let u1_twice = r1 - n1u * (n1u + 1);
    let u2_twice = (total - r1) - n2u * (n2u + 1);
    Some(finish_point(i, n1, n2, u1_twice, u2_twice))
}

/// Pair-counting `U_x`: over every (same-class `s`, other-class `o`) pair,
/// `U2'` counts `d(s) < d(o)` and `U1'` counts `d(s) > d(o)`, ties half each.
fn u_from_row_oracle(row: &[f64], classes: &[usize], i: usize) -> Option<PointU> {
    let same: Vec<f64> = (0..row.len())
        .filter(|&j| j != i && classes[j] == classes[i])
        .map(|j| row[j])
        .collect();
    let other: Vec<f64> = (0..row.len())
        .filter(|&j| classes[j] != classes[i])
        .map(|j| row[j])
        .collect();
    if same.is_empty() || other.is_empty() {
        return None;
    }
    let (mut closer, mut farther, mut ties) = (0u64, 0u64, 0u64);
    for &s in &same {
        for &o in &other {
            if s < o {
                closer += 1;
            } else if s > o {
                farther += 1;
            } else {
                ties += 1;
            }
        }
    }
    Some(finish_point(
        i,
        same.len(),
        other.len(),
        2 * farther + ties,
        2 * closer + ties,
    ))
}

/// `U_x` for point `i` of a precomputed `N x N` distance matrix, or
/// `None` when either group is empty.
pub fn u_point(d: &[f64], classes: &[usize], i: usize) -> Option<PointU> {
    let n = classes.len();
    u_from_row(&d[i * n..(i + 1) * n], classes, i)
}

/// Pair-counting counterpart of [`u_point`].
pub fn u_point_oracle(d: &[f64], classes: &[usize], i: usize) -> Option<PointU> {
    let n = classes.len();
    u_from_row_oracle(&d[i * n..(i + 1) * n], classes, i)
}

/// Dense class ids in order of first appearance.
pub fn class_ids<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let mut lookup: BTreeMap<&str, usize> = BTreeMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            *lookup.entry(l.as_ref()).or_insert_with(|| {
                names.push(l.as_ref().to_string());
                names.len() - 1
            })
        })
        .collect();
    (ids, names)
}

fn aggregate(points: Vec<Option<PointU>>, classes: &[usize], names: &[String]) -> Result<UResult, ClusterError> {
    let skipped = points.iter().filter(|p| p.is_none()).count();
    let per_point: Vec<PointU> = points.into_iter().flatten().collect();
    if per_point.is_empty() {
        return Err(ClusterError::AllSkipped);
    }
    let n = per_point.len() as f64;
    let avg_u = per_point.iter().map(|p| p.u).sum::<f64>() / n;
    let avg_closeness = per_point.iter().map(|p| p.closeness).sum::<f64>() / n;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for p in &per_point {
        let e = sums.entry(names[classes[p.index]].clone()).or_default();
        e.0 += p.u;
        e.1 += 1;
    }
    Ok(UResult {
        avg_u,
        avg_closeness,
        per_point,
        per_class: sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        skipped,
    })
}

fn prepare<S: AsRef<str>>(x: &PooledMatrix, labels: &[S]) -> Result<(Vec<usize>, Vec<String>), ClusterError> {
    if labels.len() != x.rows() {
        return Err(ClusterError::LabelCount {
            labels: labels.len(),
            points: x.rows(),
        });
    }
    let (ids, names) = class_ids(labels);
    if names.len() < 2 {
        return Err(ClusterError::SingleClass);
    }
    Ok((ids, names))
}

/// AvgU with explicit class labels, one per row. Distance rows are
/// streamed, so memory stays linear in the number of points per worker.
pub fn avg_u_labels<S: AsRef<str>>(
    x: &PooledMatrix,
    labels: &[S],
    spec: &DistanceSpec,
) -> Result<UResult, ClusterError> {
    let (classes, names) = prepare(x, labels)?;
    let d = Distances::new(x, spec)?;
    let mut sizes = vec![0usize; names.len()];
    for &c in &classes {
        sizes[c] += 1;
    }
    let points = par::map_indexed(d.n(), |i| {
        if sizes[classes[i]] < 2 {
            return None;
        }
        let mut row = Vec::new();
        d.row_into(i, &mut row);
        u_from_row(&row, &classes, i)
    });
    aggregate(points, &classes, &names)
}

pub fn avg_u(x: &PooledMatrix, key: LabelKey, spec: &DistanceSpec) -> Result<UResult, ClusterError> {
    avg_u_labels(x, &x.class_labels(key), spec)
}

/// Cubic-time pair-counting AvgU; no ranking involved.
pub fn avg_u_oracle_labels<S: AsRef<str>>(
    x: &PooledMatrix,
    labels: &[S],
    spec: &DistanceSpec,
) -> Result<UResult, ClusterError> {
    if x.rows() > ORACLE_MAX_POINTS {
        return Err(ClusterError::OracleTooLarge {
            n: x.rows(),
            max: ORACLE_MAX_POINTS,
        });
    }
    let (classes, names) = prepare(x, labels)?;
    let d = distance_matrix(x, spec)?;
    let points = (0..x.rows())
        .map(|i| u_point_oracle(&d, &classes, i))
        .collect();
    aggregate(points, &classes, &names)
}

pub fn avg_u_oracle(x: &PooledMatrix, key: LabelKey, spec: &DistanceSpec) -> Result<UResult, ClusterError> {
    avg_u_oracle_labels(x, &x.class_labels(key), spec)
}

#[derive(Debug, Error, PartialEq)]
pub enum AucError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFinite(usize),
}

/// Area under the ROC curve via the positive-class rank sum.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64, AucError> {
    if scores.len() != positive.len() {
        return Err(AucError::Length {
            scores: scores.len(),
            labels: positive.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(AucError::NonFinite(i));
    }
    let n1 = positive.iter().filter(|&&p| p).count() as u64;
    let n2 = scores.len() as u64 - n1;
    if n1 == 0 || n2 == 0 {
        return Err(AucError::SingleClass);
    }
    let ranks = doubled_ranks(scores);
    let r1: u64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    Ok((r1 - n1 * (n1 + 1)) as f64 / (2 * n1 * n2) as f64)
}

fn sweep_row(stack: &LayerStack, layer: usize, key: LabelKey, metric: String, r: &UResult) -> SweepRow {
    SweepRow {
        model: stack.model_id().to_string(),
        layer,
        label: key.as_str().to_string(),
        metric,
        variant: String::new(),
        value: r.avg_u,
        n_points: r.per_point.len(),
        n_skipped: r.skipped,
    }
}

/// Per-layer [`UResult`]s, including the per-class breakdown.
pub fn u_sweep_results(
    stack: &LayerStack,
    key: LabelKey,
    spec: &DistanceSpec,
) -> Result<Vec<UResult>, ClusterError> {
    stack.layers().iter().map(|m| avg_u(m, key, spec)).collect()
}

pub fn u_sweep(stack: &LayerStack, key: LabelKey, spec: &DistanceSpec) -> Result<SweepReport, ClusterError> {
    let metric = format!("avg_u_{}", spec.metric);
    let mut report = SweepReport::new(SweepKind::AvgU);
    for (layer, r) in u_sweep_results(stack, key, spec)?.iter().enumerate() {
        report.rows.push(sweep_row(stack, layer, key, metric.clone(), r));
    }
    Ok(report)
}

/// Per-layer AvgU after column standardization minus AvgU before it.
pub fn normalization_delta(
    stack: &LayerStack,
    key: LabelKey,
    spec: &DistanceSpec,
) -> Result<SweepReport, ClusterError> {
    let metric = format!("avg_u_delta_{}", spec.metric);
    let mut report = SweepReport::new(SweepKind::AvgU);
    for (layer, m) in stack.layers().iter().enumerate() {
        let z = zscore(m)?;
        if z.zero_variance.len() == m.cols() {
            return Err(ClusterError::ConstantLayer(layer));
        }
        let before = avg_u(m, key, spec)?;
        let after = avg_u(&z.matrix, key, spec)?;
        let mut row = sweep_row(stack, layer, key, metric.clone(), &after);
        row.value = after.avg_u - before.avg_u;
        report.rows.push(row);
    }
    Ok(report)
}
