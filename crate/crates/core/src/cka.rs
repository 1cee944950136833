//! Linear centered kernel alignment between pooled representations.
//!
//! The literal variant is the Pearson correlation between the flattened
//! dot-product Gram matrices `vec(X X^T)` and `vec(Y Y^T)`, diagonal
//! included. The centered-feature variant is the usual HSIC-normalized
//! form `||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)` on column-centred
//! data and always lies in `[0, 1]`.
//!
//! Gram entries are never stored beyond one block of rows. Per-row partial
//! sums are reduced in row order, so results are identical for every block
//! size and thread count.

// `!(a > b)` is deliberate: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::par;
use crate::report::{SweepKind, SweepReport, SweepRow};
use crate::types::{LayerStack, PooledMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum CkaError {
    #[error("need at least {min} rows, got {rows}")]
    TooFewRows { rows: usize, min: usize },
    #[error("row counts differ: {x} vs {y}")]
    RowMismatch { x: usize, y: usize },
    #[error("{0} representation has a constant Gram matrix")]
    ZeroVariance(&'static str),
    #[error("layer {layer}: row {row} is a different segment than the target's")]
    Alignment { layer: usize, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CkaVariant {
    #[default]
    LiteralCorr,
    CenteredFeature,
}

impl CkaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            CkaVariant::LiteralCorr => "literal",
            CkaVariant::CenteredFeature => "centered",
        }
    }
}

impl fmt::Display for CkaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CkaVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" | "literal_corr" => Ok(CkaVariant::LiteralCorr),
            "centered" | "centered_feature" => Ok(CkaVariant::CenteredFeature),
            _ => Err(format!("unknown CKA variant {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CkaOptions {
    /// Gram rows computed per work item.
    pub block_rows: usize,
}

impl Default for CkaOptions {
    fn default() -> Self {
        Self { block_rows: 64 }
    }
}

/// Row-major view of a real matrix.
#[derive(Clone, Copy)]
struct Rows<'a> {
    data: &'a [f64],
    cols: usize,
}

impl<'a> Rows<'a> {
    fn of(p: &'a PooledMatrix) -> Self {
        Self {
            data: p.data(),
            cols: p.cols(),
        }
    }

    fn n(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.n() {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    fn centered(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let means: Vec<f64> = self.column_sums().into_iter().map(|s| s / n).collect();
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.n() {
            out.extend(self.row(i).iter().zip(&means).map(|(v, m)| v - m));
        }
        out
    }

    fn gram_row(&self, i: usize, out: &mut [f64]) {
        let xi = self.row(i);
        for (j, g) in out.iter_mut().enumerate() {
            *g = dot(xi, self.row(j));
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `X X^T`, row-major `N x N`.
pub fn gram(x: &PooledMatrix) -> Result<Vec<f64>, CkaError> {
    let n = x.rows();
    if n < 2 {
        return Err(CkaError::TooFewRows { rows: n, min: 2 });
    }
    let xs = Rows::of(x);
    let rows = par::map_indexed(n, |i| {
        let mut r = vec![0.0; n];
        xs.gram_row(i, &mut r);
        r
    });
    Ok(rows.concat())
}

/// Sums over one Gram row: `[sxy, sxx, syy, Σgx², Σgy²]` with the Gram
/// entries shifted by the given means.
fn row_partial(gx: &[f64], gy: &[f64], mx: f64, my: f64) -> [f64; 5] {
    let mut p = [0.0; 5];
    for (&a, &b) in gx.iter().zip(gy) {
        let (da, db) = (a - mx, b - my);
        p[0] += da * db;
        p[1] += da * da;
        p[2] += db * db;
        p[3] += a * a;
        p[4] += b * b;
    }
    p
}

/// Blocked pass over both Gram matrices, returning per-row partials in
/// row order.
fn gram_partials(x: Rows, y: Rows, mx: f64, my: f64, block_rows: usize) -> Vec<[f64; 5]> {
    let n = x.n();
    let block = block_rows.clamp(1, n.max(1));
    let n_blocks = n.div_ceil(block);
    par::map_indexed(n_blocks, |b| {
        let lo = b * block;
        let hi = (lo + block).min(n);
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        (lo..hi)
            .map(|i| {
                x.gram_row(i, &mut gx);
                y.gram_row(i, &mut gy);
                row_partial(&gx, &gy, mx, my)
            })
            .collect::<Vec<_>>()
    })
    .concat()
}

fn sum_partials(parts: &[[f64; 5]]) -> [f64; 5] {
    parts.iter().fold([0.0; 5], |mut acc, p| {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
        acc
    })
}

/// Mean Gram entry: row sums of `X X^T` are `x_i . Σ_j x_j`.
fn gram_mean(x: Rows) -> f64 {
    let s = x.column_sums();
    let total: f64 = (0..x.n()).map(|i| dot(x.row(i), &s)).sum();
    total / (x.n() as f64 * x.n() as f64)
}

fn literal_corr(x: Rows, y: Rows, opts: &CkaOptions) -> Result<f64, CkaError> {
    let (mx, my) = (gram_mean(x), gram_mean(y));
    let [sxy, sxx, syy, qx, qy] = sum_partials(&gram_partials(x, y, mx, my, opts.block_rows));
    if !(sxx > 1e-24 * qx) {
        return Err(CkaError::ZeroVariance("X"));
    }
    if !(syy > 1e-24 * qy) {
        return Err(CkaError::ZeroVariance("Y"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn transpose(x: Rows) -> Vec<Vec<f64>> {
    (0..x.cols)
        .map(|c| (0..x.n()).map(|i| x.row(i)[c]).collect())
        .collect()
}

/// `||A^T B||_F^2` for column-major inputs.
fn cross_frobenius_sq(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    par::map_indexed(a.len(), |i| {
        b.iter().map(|col| dot(&a[i], col).powi(2)).sum::<f64>()
    })
    .into_iter()
    .sum()
}

fn centered_feature(x: Rows, y: Rows, opts: &CkaOptions) -> Result<f64, CkaError> {
    let n = x.n();
    let xc = x.centered();
    let yc = y.centered();
    let xr = Rows { data: &xc, cols: x.cols };
    let yr = Rows { data: &yc, cols: y.cols };
    let energy = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    if !(energy(&xc) > 1e-24 * energy(x.data)) {
        return Err(CkaError::ZeroVariance("X"));
    }
    if !(energy(&yc) > 1e-24 * energy(y.data)) {
        return Err(CkaError::ZeroVariance("Y"));
    }
    let (dx, dy) = (x.cols as f64, y.cols as f64);
    let feature_cost = dx * dx + dy * dy + dx * dy;
    let gram_cost = n as f64 * (dx + dy);
    let (hsic, kk, ll) = if feature_cost <= gram_cost {
        let (xt, yt) = (transpose(xr), transpose(yr));
        (
            cross_frobenius_sq(&xt, &yt),
            cross_frobenius_sq(&xt, &xt),
            cross_frobenius_sq(&yt, &yt),
        )
    } else {
        // <Kc, Lc> with Kc = Xc Xc^T equals ||Xc^T Yc||_F^2
        let [s, a, b, _, _] = sum_partials(&gram_partials(xr, yr, 0.0, 0.0, opts.block_rows));
        (s, a, b)
    };
    Ok((hsic / (kk.sqrt() * ll.sqrt())).clamp(0.0, 1.0))
}

/// Linear CKA with default options.
pub fn linear_cka(x: &PooledMatrix, y: &PooledMatrix, variant: CkaVariant) -> Result<f64, CkaError> {
    linear_cka_with(x, y, variant, &CkaOptions::default())
}

pub fn linear_cka_with(
    x: &PooledMatrix,
    y: &PooledMatrix,
    variant: CkaVariant,
    opts: &CkaOptions,
) -> Result<f64, CkaError> {
    if x.rows() != y.rows() {
        return Err(CkaError::RowMismatch {
            x: x.rows(),
            y: y.rows(),
        });
    }
    if x.rows() < 3 {
        return Err(CkaError::TooFewRows {
            rows: x.rows(),
            min: 3,
        });
    }
    let (xr, yr) = (Rows::of(x), Rows::of(y));
    match variant {
        CkaVariant::LiteralCorr => literal_corr(xr, yr, opts),
        CkaVariant::CenteredFeature => centered_feature(xr, yr, opts),
    }
}

/// CKA of every layer against `target`, whose rows must be the same
/// segments in the same order.
pub fn cka_sweep(
    stack: &LayerStack,
    target: &PooledMatrix,
    target_name: &str,
    variant: CkaVariant,
) -> Result<SweepReport, CkaError> {
    let labels = stack.labels();
    if labels.len() != target.rows() {
        return Err(CkaError::RowMismatch {
            x: labels.len(),
            y: target.rows(),
        });
    }
    if let Some(row) = (0..labels.len())
        .find(|&r| labels[r].segment_key() != target.labels()[r].segment_key())
    {
        return Err(CkaError::Alignment { layer: 0, row });
    }
    let mut report = SweepReport::new(SweepKind::Cka);
    for (layer, m) in stack.layers().iter().enumerate() {
        let value = linear_cka(m, target, variant)?;
        report.rows.push(SweepRow {
            model: stack.model_id().to_string(),
            layer,
            label: String::new(),
            metric: target_name.to_string(),
            variant: variant.as_str().to_string(),
            value,
            n_points: target.rows(),
            n_skipped: 0,
        });
    }
    Ok(report)
}
