//! Matrix and label types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("data length {len} does not match {rows}x{cols}")]
    Length { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("frame rate must be positive and finite, got {0}")]
    FrameRate(f64),
    #[error("{rows} rows but {labels} label records")]
    LabelCount { rows: usize, labels: usize },
}

fn check_finite<T: Copy + Into<f64>>(data: &[T], cols: usize) -> Result<(), ShapeError> {
    match data.iter().position(|v| !(*v).into().is_finite()) {
        Some(i) => Err(ShapeError::NonFinite {
            row: i / cols.max(1),
            col: i % cols.max(1),
        }),
        None => Ok(()),
    }
}

/// Frame-level features of one utterance, stored in single precision to
/// match the on-disk tensor format.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    utterance_id: String,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    frame_rate: f64,
    t0: f64,
}

impl FrameMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        frame_rate: f64,
        t0: f64,
    ) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::Length {
                rows,
                cols,
                len: data.len(),
            });
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(ShapeError::FrameRate(frame_rate));
        }
        check_finite(&data, cols)?;
        Ok(Self {
            utterance_id: utterance_id.into(),
            rows,
            cols,
            data,
            frame_rate,
            t0,
        })
    }

    /// Builds a matrix from double-precision rows, rounding to `f32`.
    pub fn from_rows_f64(
        utterance_id: impl Into<String>,
        rows: &[Vec<f64>],
        cols: usize,
        frame_rate: f64,
        t0: f64,
    ) -> Result<Self, ShapeError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(ShapeError::Length {
                    rows: rows.len(),
                    cols,
                    len: row.len(),
                });
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(utterance_id, rows.len(), cols, data, frame_rate, t0)
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn set_utterance_id(&mut self, id: impl Into<String>) {
        self.utterance_id = id.into();
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Time in seconds of the centre of frame `k`.
    pub fn frame_center(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.frame_rate
    }
}

/// Label columns a pooled sample can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKey {
    Phone,
    Speaker,
    Dataset,
    Gender,
}

impl LabelKey {
    pub const ALL: [LabelKey; 4] = [
        LabelKey::Phone,
        LabelKey::Speaker,
        LabelKey::Dataset,
        LabelKey::Gender,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelKey::Phone => "phone",
            LabelKey::Speaker => "speaker",
            LabelKey::Dataset => "dataset",
            LabelKey::Gender => "gender",
        }
    }
}

impl fmt::Display for LabelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LabelKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown label key {s:?}"))
    }
}

/// Identity and class labels of one phone instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub utterance_id: String,
    /// Row index of the segment in its utterance's alignment table.
    pub segment: usize,
    pub start: f64,
    pub end: f64,
    pub phone: String,
    pub speaker: String,
    pub dataset: String,
    pub gender: String,
}

impl LabelRecord {
    pub fn get(&self, key: LabelKey) -> &str {
        match key {
            LabelKey::Phone => &self.phone,
            LabelKey::Speaker => &self.speaker,
            LabelKey::Dataset => &self.dataset,
            LabelKey::Gender => &self.gender,
        }
    }

    /// Key identifying the same segment across layers and feature sources.
    pub fn segment_key(&self) -> (&str, usize) {
        (&self.utterance_id, self.segment)
    }
}

/// One row per phone instance, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    labels: Vec<LabelRecord>,
}

impl PooledMatrix {
    pub fn new(
        cols: usize,
        data: Vec<f64>,
        labels: Vec<LabelRecord>,
    ) -> Result<Self, ShapeError> {
        let rows = labels.len();
        if data.len() != rows * cols {
            if cols > 0 && data.len().is_multiple_of(cols) {
                return Err(ShapeError::LabelCount {
                    rows: data.len() / cols,
                    labels: rows,
                });
            }
            return Err(ShapeError::Length {
                rows,
                cols,
                len: data.len(),
            });
        }
        check_finite(&data, cols)?;
        Ok(Self {
            rows,
            cols,
            data,
            labels,
        })
    }

    /// Pooled matrix with synthetic labels, for statistics that only need
    /// class memberships. `classes[i]` becomes the value of every label key.
    pub fn with_classes<S: AsRef<str>>(
        cols: usize,
        data: Vec<f64>,
        classes: &[S],
    ) -> Result<Self, ShapeError> {
        let labels = classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let c = c.as_ref().to_string();
                LabelRecord {
                    utterance_id: "synthetic".into(),
                    segment: i,
                    start: i as f64,
                    end: i as f64 + 1.0,
                    phone: c.clone(),
                    speaker: c.clone(),
                    dataset: c.clone(),
                    gender: c,
                }
            })
            .collect();
        Self::new(cols, data, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[LabelRecord] {
        &self.labels
    }

    pub fn class_labels(&self, key: LabelKey) -> Vec<&str> {
        self.labels.iter().map(|l| l.get(key)).collect()
    }

    /// Same labels, new values.
    pub fn with_data(&self, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        Self::new(cols, data, self.labels.clone())
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i].clone());
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
            labels,
        }
    }

    /// Stacks matrices with the same column count on top of each other.
    pub fn vstack(parts: &[PooledMatrix]) -> Result<Self, ShapeError> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(ShapeError::Length {
                    rows: p.rows,
                    cols,
                    len: p.data.len(),
                });
            }
            data.extend_from_slice(&p.data);
            labels.extend(p.labels.iter().cloned());
        }
        Self::new(cols, data, labels)
    }
}

/// Pooled representations of the same segments at every layer of one model.
/// Layer 0 is the projection feeding the first transformer block.
#[derive(Debug, Clone)]
pub struct LayerStack {
    model_id: String,
    layers: Vec<PooledMatrix>,
}

impl LayerStack {
    pub(crate) fn from_validated(model_id: String, layers: Vec<PooledMatrix>) -> Self {
        Self { model_id, layers }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn layers(&self) -> &[PooledMatrix] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn labels(&self) -> &[LabelRecord] {
        self.layers.first().map_or(&[], |l| l.labels())
    }
}
