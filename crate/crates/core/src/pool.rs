//! Frame-to-segment pooling, dataset-level standardization, and layer
//! stacking.

use std::collections::BTreeSet;
use std::ops::Range;

use thiserror::Error;

use crate::segments::{arpabet, SegmentTable};
use crate::types::{FrameMatrix, LabelRecord, LayerStack, PooledMatrix, ShapeError};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("segment row {row} belongs to utterance {found:?}, frames are {expected:?}")]
    UtteranceMismatch {
        row: usize,
        expected: String,
        found: String,
    },
    #[error("no segments survived pooling ({short} too short, {filtered} filtered)")]
    NoSegments { short: usize, filtered: usize },
    #[error("standardization needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("layer stack is empty")]
    EmptyStack,
    #[error("layer {layer} has {found} rows, layer 0 has {expected}")]
    RowCount {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer} row {row} labels differ from layer 0")]
    LabelMismatch { layer: usize, row: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Which segments to keep and how many frames each needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingSpec {
    pub min_frames: usize,
    /// Canonical ARPABET symbols to keep; `None` keeps everything.
    pub phone_filter: Option<BTreeSet<String>>,
    /// Canonical symbols to drop.
    pub exclude: BTreeSet<String>,
}

impl Default for PoolingSpec {
    fn default() -> Self {
        Self {
            min_frames: 1,
            phone_filter: None,
            exclude: arpabet::SILENCE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PoolingSpec {
    pub fn vowels() -> Self {
        Self {
            phone_filter: Some(arpabet::VOWELS.iter().map(|s| s.to_string()).collect()),
            ..Self::default()
        }
    }

    pub fn keeps(&self, phone: &str) -> bool {
        let p = arpabet::canonical(phone);
        !self.exclude.contains(&p) && self.phone_filter.as_ref().is_none_or(|f| f.contains(&p))
    }
}

/// Frames whose centre lies in `[start, end)`.
pub fn frame_range(frames: &FrameMatrix, start: f64, end: f64) -> Range<usize> {
    let n = frames.rows();
    let first_at_or_after = |t: f64| {
        let est = ((t - frames.t0()) * frames.frame_rate()).ceil();
        let mut k = if est <= 0.0 { 0 } else { (est as usize).min(n) };
        while k > 0 && frames.frame_center(k - 1) >= t {
            k -= 1;
        }
        while k < n && frames.frame_center(k) < t {
            k += 1;
        }
        k
    };
    let lo = first_at_or_after(start);
    let hi = first_at_or_after(end).max(lo);
    lo..hi
}

pub(crate) fn label_for(segments: &SegmentTable, row: usize) -> LabelRecord {
    let s = &segments.rows[row];
    LabelRecord {
        utterance_id: s.utterance_id.clone(),
        segment: row,
        start: s.start,
        end: s.end,
        phone: s.phone.clone(),
        speaker: s.speaker.clone(),
        dataset: s.dataset.clone(),
        gender: s.gender.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct PoolOutcome {
    pub pooled: PooledMatrix,
    /// Segments with fewer than `min_frames` frames.
    pub dropped_short: usize,
    /// Segments removed by the phone filter or exclusion set.
    pub dropped_filtered: usize,
}

/// Averages the frames of each segment. Rows keep segment order; each label
/// records the segment's row index in `segments`.
pub fn pool(
    frames: &FrameMatrix,
    segments: &SegmentTable,
    spec: &PoolingSpec,
) -> Result<PoolOutcome, PoolError> {
    let cols = frames.cols();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let (mut short, mut filtered) = (0, 0);
    for (row, seg) in segments.rows.iter().enumerate() {
        if seg.utterance_id != frames.utterance_id() {
            return Err(PoolError::UtteranceMismatch {
                row,
                expected: frames.utterance_id().to_string(),
                found: seg.utterance_id.clone(),
            });
        }
        if !spec.keeps(&seg.phone) {
            filtered += 1;
            continue;
        }
        let range = frame_range(frames, seg.start, seg.end);
        if range.len() < spec.min_frames.max(1) {
            short += 1;
            continue;
        }
        let count = range.len() as f64;
        let mut sum = vec![0.0f64; cols];
        for k in range {
            for (acc, &v) in sum.iter_mut().zip(frames.row(k)) {
                *acc += v as f64;
            }
        }
        data.extend(sum.into_iter().map(|s| s / count));
        labels.push(label_for(segments, row));
    }
    if labels.is_empty() {
        return Err(PoolError::NoSegments { short, filtered });
    }
    Ok(PoolOutcome {
        pooled: PooledMatrix::new(cols, data, labels)?,
        dropped_short: short,
        dropped_filtered: filtered,
    })
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub matrix: PooledMatrix,
    /// Columns with zero variance; these are centred but not scaled.
    pub zero_variance: Vec<usize>,
}

/// Per-column `(mean, population std)`.
pub fn column_moments(p: &PooledMatrix) -> Vec<(f64, f64)> {
    let n = p.rows() as f64;
    (0..p.cols())
        .map(|c| {
            let mean = (0..p.rows()).map(|r| p.row(r)[c]).sum::<f64>() / n;
            let var = (0..p.rows())
                .map(|r| (p.row(r)[c] - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Subtracts each column's mean and divides by its population standard
/// deviation.
pub fn zscore(p: &PooledMatrix) -> Result<Standardized, PoolError> {
    if p.rows() < 2 {
        return Err(PoolError::TooFewRows(p.rows()));
    }
    let moments = column_moments(p);
    let zero_variance: Vec<usize> = moments
        .iter()
        .enumerate()
        .filter(|(_, (mean, std))| *std <= 1e-12 * mean.abs().max(1.0))
        .map(|(c, _)| c)
        .collect();
    let mut data = Vec::with_capacity(p.data().len());
    for r in 0..p.rows() {
        for (c, &v) in p.row(r).iter().enumerate() {
            let (mean, std) = moments[c];
            data.push(if zero_variance.binary_search(&c).is_ok() {
                0.0
            } else {
                (v - mean) / std
            });
        }
    }
    Ok(Standardized {
        matrix: p.with_data(p.cols(), data)?,
        zero_variance,
    })
}

/// Checks that every layer holds the same segments in the same order.
pub fn stack_layers(
    model_id: impl Into<String>,
    per_layer: Vec<PooledMatrix>,
) -> Result<LayerStack, PoolError> {
    let first = per_layer.first().ok_or(PoolError::EmptyStack)?;
    for (layer, m) in per_layer.iter().enumerate().skip(1) {
        if m.rows() != first.rows() {
            return Err(PoolError::RowCount {
                layer,
                expected: first.rows(),
                found: m.rows(),
            });
        }
        if let Some(row) = (0..m.rows()).find(|&r| m.labels()[r] != first.labels()[r]) {
            return Err(PoolError::LabelMismatch { layer, row });
        }
    }
    Ok(LayerStack::from_validated(model_id.into(), per_layer))
}
