use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{hann, FeatureConfig, FeatureError, Framing, WaveBuffer};
use crate::types::FrameMatrix;

/// Floor applied before taking logs of filter-bank energies.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Unnormalized power spectra `|X_k|^2`, `k = 0..=fft/2`, of Hann-windowed,
/// zero-padded frames.
pub(crate) fn power_frames(w: &WaveBuffer, fr: &Framing) -> Result<Vec<Vec<f64>>, FeatureError> {
    let n_frames = fr.frame_count(w.samples().len())?;
    let window = hann(fr.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fr.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fr.fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let bins = fr.fft_size / 2 + 1;
    let mut out = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let frame = &w.samples()[k * fr.hop..k * fr.hop + fr.window];
        for (b, (x, h)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex::new(x * h, 0.0);
        }
        buf[fr.window..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.push(buf[..bins].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

fn to_frames(fr: &Framing, rows: &[Vec<f64>], cols: usize) -> Result<FrameMatrix, FeatureError> {
    Ok(FrameMatrix::from_rows_f64("", rows, cols, fr.frame_rate(), fr.t0())?)
}

/// Power spectrogram: one row per frame, `fft_size / 2 + 1` columns.
pub fn stft_power(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    let fr = cfg.framing(w.sample_rate())?;
    let rows = power_frames(w, &fr)?;
    to_frames(&fr, &rows, fr.fft_size / 2 + 1)
}

/// Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist, peak
/// weight 1. Each filter is a sparse list of `(bin, weight)`.
pub fn mel_filterbank(n_bands: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    (0..n_bands)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=fft_size / 2)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let wgt = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (wgt > 0.0).then_some((k, wgt))
                })
                .collect()
        })
        .collect()
}

fn log_mel_rows(
    power: &[Vec<f64>],
    fr: &Framing,
    n_bands: usize,
) -> Vec<Vec<f64>> {
    let bank = mel_filterbank(n_bands, fr.fft_size, fr.sample_rate);
    power
        .iter()
        .map(|p| {
            bank.iter()
                .map(|filt| {
                    let e: f64 = filt.iter().map(|&(k, wgt)| wgt * p[k]).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect()
}

fn log_mel_bands(
    w: &WaveBuffer,
    cfg: &FeatureConfig,
    n_bands: usize,
) -> Result<FrameMatrix, FeatureError> {
    let fr = cfg.framing(w.sample_rate())?;
    let power = power_frames(w, &fr)?;
    to_frames(&fr, &log_mel_rows(&power, &fr, n_bands), n_bands)
}

/// Natural-log mel energies, `cfg.n_mels` columns.
pub fn log_mel(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    log_mel_bands(w, cfg, cfg.n_mels)
}

/// Log mel filter-bank energies with `cfg.fbank_bins` bands (23 by default),
/// Kaldi-style: no dither, frames snipped at the edges, no DCT.
pub fn fbank(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    log_mel_bands(w, cfg, cfg.fbank_bins)
}

/// Orthonormal DCT-II of `x`, first `keep` coefficients.
pub fn dct_ortho(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                })
                .sum();
            scale * s
        })
        .collect()
}

/// Regression deltas over +-2 frames with edge replication.
pub fn deltas(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    const N: isize = 2;
    let denom = 2.0 * (1..=N).map(|n| (n * n) as f64).sum::<f64>();
    let last = rows.len() as isize - 1;
    let at = |t: isize| &rows[t.clamp(0, last) as usize];
    (0..rows.len() as isize)
        .map(|t| {
            (0..rows[0].len())
                .map(|c| {
                    (1..=N)
                        .map(|n| n as f64 * (at(t + n)[c] - at(t - n)[c]))
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// `n_mfcc` cepstra (c0 included) followed by their deltas and delta-deltas.
pub fn mfcc(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    let lm = log_mel(w, cfg)?;
    let ceps: Vec<Vec<f64>> = (0..lm.rows())
        .map(|r| {
            let row: Vec<f64> = lm.row(r).iter().map(|&v| v as f64).collect();
            dct_ortho(&row, cfg.n_mfcc)
        })
        .collect();
    let d1 = deltas(&ceps);
    let d2 = deltas(&d1);
    let rows: Vec<Vec<f64>> = ceps
        .iter()
        .zip(&d1)
        .zip(&d2)
        .map(|((c, a), b)| c.iter().chain(a).chain(b).copied().collect())
        .collect();
    Ok(FrameMatrix::from_rows_f64(
        "",
        &rows,
        3 * cfg.n_mfcc,
        lm.frame_rate(),
        lm.t0(),
    )?)
}

/// Power-weighted mean frequency per frame in Hz; 0 for frames with total
/// power below 1e-12.
pub fn spectral_centroid(w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
    let fr = cfg.framing(w.sample_rate())?;
    let bin_hz = fr.sample_rate as f64 / fr.fft_size as f64;
    let rows: Vec<Vec<f64>> = power_frames(w, &fr)?
        .iter()
        .map(|p| {
            let total: f64 = p.iter().sum();
            if total < 1e-12 {
                return vec![0.0];
            }
            let weighted: f64 = p.iter().enumerate().map(|(k, v)| k as f64 * bin_hz * v).sum();
            vec![weighted / total]
        })
        .collect();
    to_frames(&fr, &rows, 1)
}
