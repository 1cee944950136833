//! Frame-wise F0 from the cumulative-mean-normalized difference function.

use super::{frame_count, FeatureConfig, FeatureError, WaveBuffer};
use crate::types::FrameMatrix;

/// Dip depth that ends the lag search early; the first dip below it wins,
/// which keeps period multiples from being picked.
const DIP_THRESHOLD: f64 = 0.15;

/// Columns: F0 in Hz, voicing flag (0/1). F0 is 0 exactly on unvoiced frames.
pub fn f0_track(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    cfg.validate()?;
    let sr = w.sample_rate() as f64;
    let window = (cfg.f0_window_len * sr).round() as usize;
    let hop = (cfg.hop * sr).round() as usize;
    let max_lag = (sr / cfg.f0_min).ceil() as usize;
    let min_lag = ((sr / cfg.f0_max).floor() as usize).max(2);
    if window < 2 * max_lag {
        return Err(FeatureError::F0WindowTooShort {
            window,
            needed: 2 * max_lag,
        });
    }
    let n_frames = frame_count(w.samples().len(), window, hop)?;
    let mut diff = vec![0.0; max_lag + 2];
    let mut cmnd = vec![1.0; max_lag + 2];
    let rows: Vec<Vec<f64>> = (0..n_frames)
        .map(|k| {
            let frame = &w.samples()[k * hop..k * hop + window];
            match estimate_period(frame, min_lag, max_lag, &mut diff, &mut cmnd) {
                Some((period, clarity)) if clarity >= cfg.voicing_threshold => {
                    vec![sr / period, 1.0]
                }
                _ => vec![0.0, 0.0],
            }
        })
        .collect();
    Ok(FrameMatrix::from_rows_f64(
        "",
        &rows,
        2,
        sr / hop as f64,
        window as f64 / 2.0 / sr,
    )?)
}

/// Returns the interpolated period in samples and its clarity `1 - d'(tau)`.
fn estimate_period(
    frame: &[f64],
    min_lag: usize,
    max_lag: usize,
    diff: &mut [f64],
    cmnd: &mut [f64],
) -> Option<(f64, f64)> {
    // integrate over the part of the frame every lag can see
    let span = frame.len() - max_lag;
    let top = max_lag;
    for tau in 1..=top {
        diff[tau] = (0..span)
            .map(|j| {
                let d = frame[j] - frame[j + tau];
                d * d
            })
            .sum();
    }
    cmnd[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=top {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let mut best = None;
    let mut tau = min_lag;
    while tau <= max_lag {
        if cmnd[tau] < DIP_THRESHOLD {
            while tau < max_lag && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            best = Some(tau);
            break;
        }
        tau += 1;
    }
    let tau = best.unwrap_or_else(|| {
        (min_lag..=max_lag)
            .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
            .unwrap()
    });
    let clarity = (1.0 - cmnd[tau]).max(0.0);
    if clarity == 0.0 {
        return None;
    }

    let mut period = tau as f64;
    if tau > 1 && tau < top {
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom > 0.0 {
            let shift = 0.5 * (a - c) / denom;
            if shift.abs() < 1.0 {
                period += shift;
            }
        }
    }
    Some((period, clarity))
}
