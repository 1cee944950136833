use std::fmt;
use std::str::FromStr;

use super::{f0_track, formants, spectral_centroid, FeatureConfig, FeatureError, WaveBuffer};
use crate::pool::{frame_range, label_for};
use crate::segments::SegmentTable;
use crate::types::{FrameMatrix, PooledMatrix};

/// Two-column acoustic targets compared against learned representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcousticTarget {
    /// Mean voiced F0 and mean spectral centroid.
    F0Centroid,
    /// Mean F1 and F2 over frames where both were found.
    F1F2,
}

impl AcousticTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            AcousticTarget::F0Centroid => "f0_centroid",
            AcousticTarget::F1F2 => "f1_f2",
        }
    }
}

impl fmt::Display for AcousticTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcousticTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f0_centroid" => Ok(AcousticTarget::F0Centroid),
            "f1_f2" => Ok(AcousticTarget::F1F2),
            _ => Err(format!("unknown acoustic target {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TargetOutcome {
    /// `None` when every segment was dropped.
    pub pooled: Option<PooledMatrix>,
    /// Segments with no usable frames.
    pub dropped: usize,
}

/// Mean of column `col` over frames in `[start, end)` that pass `keep`.
fn masked_mean(
    m: &FrameMatrix,
    start: f64,
    end: f64,
    col: usize,
    keep: impl Fn(&[f32]) -> bool,
) -> Option<f64> {
    let (sum, n) = frame_range(m, start, end)
        .map(|k| m.row(k))
        .filter(|row| keep(row))
        .fold((0.0, 0usize), |(s, n), row| (s + row[col] as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Pools an acoustic target over every segment. Labels carry each
/// segment's row index in `segments`; the table's utterance ids are not
/// checked against the waveform.
pub fn acoustic_target(
    w: &WaveBuffer,
    cfg: &FeatureConfig,
    segments: &SegmentTable,
    which: AcousticTarget,
) -> Result<TargetOutcome, FeatureError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    let mut push = |row: usize, values: Option<[f64; 2]>| match values {
        Some(v) => {
            data.extend(v);
            labels.push(label_for(segments, row));
        }
        None => dropped += 1,
    };
    match which {
        AcousticTarget::F0Centroid => {
            let f0 = f0_track(w, cfg)?;
            let cent = spectral_centroid(w, cfg)?;
            for (row, s) in segments.rows.iter().enumerate() {
                let pitch = masked_mean(&f0, s.start, s.end, 0, |r| r[1] == 1.0);
                let c = masked_mean(&cent, s.start, s.end, 0, |_| true);
                push(row, pitch.zip(c).map(|(a, b)| [a, b]));
            }
        }
        AcousticTarget::F1F2 => {
            let fm = formants(w, cfg)?;
            let valid = |r: &[f32]| r[0] > 0.0 && r[1] > 0.0;
            for (row, s) in segments.rows.iter().enumerate() {
                let f1 = masked_mean(&fm, s.start, s.end, 0, valid);
                let f2 = masked_mean(&fm, s.start, s.end, 1, valid);
                push(row, f1.zip(f2).map(|(a, b)| [a, b]));
            }
        }
    }
    let pooled = if labels.is_empty() {
        None
    } else {
        Some(PooledMatrix::new(2, data, labels)?)
    };
    Ok(TargetOutcome { pooled, dropped })
}
