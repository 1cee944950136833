//! LPC formant estimation: autocorrelation, Levinson-Durbin, polynomial
//! roots, and the bandwidth/frequency candidate filter.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

use super::{hann, FeatureConfig, FeatureError, WaveBuffer};
use crate::types::FrameMatrix;

const MIN_FORMANT_HZ: f64 = 90.0;
const NYQUIST_MARGIN_HZ: f64 = 50.0;

/// Solves the Toeplitz normal equations for predictor coefficients
/// `a[0] = 1, a[1..=order]` given autocorrelation `r[0..=order]`.
/// Returns `None` when the autocorrelation is not positive definite.
pub fn levinson_durbin(r: &[f64], order: usize) -> Option<(Vec<f64>, f64)> {
    if r.len() <= order || !(r[0] > 0.0) {
        return None;
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    let mut prev = a.clone();
    for i in 1..=order {
        let acc: f64 = r[i] + (1..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = -acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            return None;
        }
        prev.copy_from_slice(&a);
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            return None;
        }
    }
    Some((a, err))
}

fn eval_with_derivative(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    // Horner on the monic polynomial coeffs[0] z^n + ... + coeffs[n]
    let mut p = Complex64::new(coeffs[0], 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in &coeffs[1..] {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of `coeffs[0] z^n + coeffs[1] z^(n-1) + ... + coeffs[n]` by
/// Aberth-Ehrlich iteration. Returns `None` if it fails to converge.
pub fn polynomial_roots(coeffs: &[f64]) -> Option<Vec<Complex64>> {
    let n = coeffs.len().checked_sub(1)?;
    if n == 0 || coeffs[0] == 0.0 {
        return None;
    }
    let lead = coeffs[0];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    // LPC roots sit inside the unit circle; start just inside it.
    let radius = 0.9;
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(radius, 2.0 * PI * k as f64 / n as f64 + 0.4))
        .collect();
    for _ in 0..1000 {
        let mut max_step = 0.0f64;
        for k in 0..n {
            let (p, dp) = eval_with_derivative(&monic, z[k]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != k)
                .map(|j| (z[k] - z[j]).inv())
                .sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if !step.re.is_finite() || !step.im.is_finite() {
                return None;
            }
            z[k] -= step;
            max_step = max_step.max(step.norm() / z[k].norm().max(1.0));
        }
        if max_step < 1e-14 {
            return Some(z);
        }
    }
    // Accept slow convergence as long as every residual is small.
    let scale: f64 = monic.iter().map(|c| c.abs()).sum();
    z.iter()
        .all(|&r| eval_with_derivative(&monic, r).0.norm() < 1e-9 * scale)
        .then_some(z)
}

/// Formant candidates `(frequency, bandwidth)` in Hz from predictor
/// coefficients, sorted by frequency.
pub fn lpc_formant_candidates(a: &[f64], sample_rate: f64, max_bandwidth: f64) -> Vec<(f64, f64)> {
    let Some(roots) = polynomial_roots(a) else {
        return Vec::new();
    };
    let nyquist = sample_rate / 2.0;
    let mut cands: Vec<(f64, f64)> = roots
        .iter()
        .filter(|r| r.im > 0.0)
        .filter_map(|r| {
            let freq = r.im.atan2(r.re) * sample_rate / (2.0 * PI);
            let bw = -(sample_rate / PI) * r.norm().ln();
            (bw < max_bandwidth && freq > MIN_FORMANT_HZ && freq < nyquist - NYQUIST_MARGIN_HZ)
                .then_some((freq, bw))
        })
        .collect();
    cands.sort_by(|x, y| x.0.total_cmp(&y.0));
    cands
}

/// Columns: F1, F2 in Hz. A missing formant is 0; frames whose
/// autocorrelation is singular are `(0, 0)`.
pub fn formants(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    let fr = cfg.framing(w.sample_rate())?;
    let n_frames = fr.frame_count(w.samples().len())?;
    let order = cfg.lpc_order_for(w.sample_rate());
    let sr = w.sample_rate() as f64;
    let window = hann(fr.window);
    let samples = w.samples();
    let rows: Vec<Vec<f64>> = crate::par::map_indexed(n_frames, |k| {
        let start = k * fr.hop;
        let mut prev = if start > 0 { samples[start - 1] } else { 0.0 };
        let frame: Vec<f64> = samples[start..start + fr.window]
            .iter()
            .zip(&window)
            .map(|(&x, h)| {
                let y = x - cfg.preemphasis * prev;
                prev = x;
                y * h
            })
            .collect();
        let r: Vec<f64> = (0..=order)
            .map(|lag| {
                frame[..frame.len().saturating_sub(lag)]
                    .iter()
                    .zip(&frame[lag.min(frame.len())..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let Some((a, _)) = levinson_durbin(&r, order) else {
            return vec![0.0, 0.0];
        };
        let cands = lpc_formant_candidates(&a, sr, cfg.formant_max_bandwidth);
        vec![
            cands.first().map_or(0.0, |c| c.0),
            cands.get(1).map_or(0.0, |c| c.0),
        ]
    });
    Ok(FrameMatrix::from_rows_f64("", &rows, 2, fr.frame_rate(), fr.t0())?)
}
