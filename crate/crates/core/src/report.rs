//! Per-layer metric tables and their CSV forms.
//!
//! Two layouts exist, distinguished by header:
//!
//! ```text
//! model,layer,metric,variant,value,n_segments            (CKA sweeps)
//! model,layer,label,metric,value,n_points,n_skipped      (AvgU sweeps)
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const CKA_HEADER: [&str; 6] = ["model", "layer", "metric", "variant", "value", "n_segments"];
pub const AVGU_HEADER: [&str; 7] = [
    "model", "layer", "label", "metric", "value", "n_points", "n_skipped",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unrecognized report header {0:?}")]
    Header(String),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("report has no rows")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Cka,
    AvgU,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: String,
    pub layer: usize,
    /// Label key for AvgU rows; empty for CKA rows.
    pub label: String,
    pub metric: String,
    /// CKA variant; empty for AvgU rows.
    pub variant: String,
    pub value: f64,
    /// Segments (CKA) or computed points (AvgU).
    pub n_points: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

/// One curve of a report: all rows sharing model, metric, label and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

impl SweepReport {
    pub fn new(kind: SweepKind) -> Self {
        Self {
            kind,
            rows: Vec::new(),
        }
    }

    pub fn extend(&mut self, other: SweepReport) {
        self.rows.extend(other.rows);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    /// Curves in order of first appearance.
    pub fn series(&self) -> Vec<Series> {
        let mut out: Vec<(Vec<&str>, Series)> = Vec::new();
        for r in &self.rows {
            let key = vec![
                r.model.as_str(),
                r.metric.as_str(),
                r.label.as_str(),
                r.variant.as_str(),
            ];
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, s)) => s.points.push((r.layer, r.value)),
                None => {
                    let detail = match self.kind {
                        SweepKind::Cka => format!("{} {}", r.metric, r.variant),
                        SweepKind::AvgU => format!("{} {}", r.label, r.metric),
                    };
                    out.push((
                        key,
                        Series {
                            name: format!("{} ({})", r.model, detail.trim()),
                            points: vec![(r.layer, r.value)],
                        },
                    ));
                }
            }
        }
        out.into_iter().map(|(_, s)| s).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        match self.kind {
            SweepKind::Cka => {
                w.write_record(CKA_HEADER).unwrap();
                for r in &self.rows {
                    w.write_record([
                        r.model.clone(),
                        r.layer.to_string(),
                        r.metric.clone(),
                        r.variant.clone(),
                        r.value.to_string(),
                        r.n_points.to_string(),
                    ])
                    .unwrap();
                }
            }
            SweepKind::AvgU => {
                w.write_record(AVGU_HEADER).unwrap();
                for r in &self.rows {
                    w.write_record([
                        r.model.clone(),
                        r.layer.to_string(),
                        r.label.clone(),
                        r.metric.clone(),
                        r.value.to_string(),
                        r.n_points.to_string(),
                        r.n_skipped.to_string(),
                    ])
                    .unwrap();
                }
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| ReportError::Header(e.to_string()))?
            .clone();
        let names: Vec<&str> = header.iter().collect();
        let kind = if names == CKA_HEADER {
            SweepKind::Cka
        } else if names == AVGU_HEADER {
            SweepKind::AvgU
        } else {
            return Err(ReportError::Header(names.join(",")));
        };
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| ReportError::Row {
                row,
                reason: e.to_string(),
            })?;
            let field = |idx: usize| rec.get(idx).unwrap_or_default().to_string();
            let num = |idx: usize| -> Result<usize, ReportError> {
                field(idx).parse().map_err(|_| ReportError::Row {
                    row,
                    reason: format!("column {} is not an integer", names[idx]),
                })
            };
            let value = |idx: usize| -> Result<f64, ReportError> {
                field(idx).parse().map_err(|_| ReportError::Row {
                    row,
                    reason: "value is not a number".into(),
                })
            };
            rows.push(match kind {
                SweepKind::Cka => SweepRow {
                    model: field(0),
                    layer: num(1)?,
                    label: String::new(),
                    metric: field(2),
                    variant: field(3),
                    value: value(4)?,
                    n_points: num(5)?,
                    n_skipped: 0,
                },
                SweepKind::AvgU => SweepRow {
                    model: field(0),
                    layer: num(1)?,
                    label: field(2),
                    metric: field(3),
                    variant: String::new(),
                    value: value(4)?,
                    n_points: num(5)?,
                    n_skipped: num(6)?,
                },
            });
        }
        Ok(Self { kind, rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        fs::write(path, self.to_csv()).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv(&text)
    }
}
