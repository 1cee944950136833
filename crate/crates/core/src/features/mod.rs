//! Classic and acoustic speech features computed from raw waveforms.
//!
//! Every extractor is a pure function of a [`WaveBuffer`] and a
//! [`FeatureConfig`] and returns a [`FrameMatrix`] whose `t0` and
//! `frame_rate` locate each frame centre in time, so features with different
//! analysis windows can be pooled over the same segments.

mod formant;
mod pitch;
mod spectral;
mod target;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use formant::{formants, levinson_durbin, lpc_formant_candidates, polynomial_roots};
pub use pitch::f0_track;
pub use spectral::{
    dct_ortho, deltas, fbank, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, mfcc,
    spectral_centroid, stft_power, LOG_FLOOR,
};
pub use target::{acoustic_target, AcousticTarget, TargetOutcome};

use crate::types::{FrameMatrix, ShapeError};

pub const MIN_SAMPLE_RATE: u32 = 8000;
pub const MAX_SAMPLE_RATE: u32 = 48000;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("sample rate {0} Hz outside {MIN_SAMPLE_RATE}..={MAX_SAMPLE_RATE}")]
    SampleRate(u32),
    #[error("signal of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("f0 window of {window} samples covers fewer than two periods of f0_min ({needed} samples needed)")]
    F0WindowTooShort { window: usize, needed: usize },
    #[error("invalid feature configuration: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Wav { path: PathBuf, reason: String },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl WaveBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FeatureError> {
        if !(MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&sample_rate) {
            return Err(FeatureError::SampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(FeatureError::Config("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a 16-bit PCM mono WAV file.
    pub fn read_wav(path: &Path) -> Result<Self, FeatureError> {
        let wav_err = |reason: String| FeatureError::Wav {
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(e.to_string()))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(wav_err(format!("{} channels, expected mono", spec.channels)));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(wav_err("only 16-bit PCM is supported".into()));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| wav_err(e.to_string()))?;
        Self::new(samples, spec.sample_rate)
    }

    /// Sample rate from the WAV header, without decoding samples.
    pub fn probe_sample_rate(path: &Path) -> Result<u32, FeatureError> {
        hound::WavReader::open(path)
            .map(|r| r.spec().sample_rate)
            .map_err(|e| FeatureError::Wav {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }

    /// Writes 16-bit PCM, clipping to [-1, 1].
    pub fn write_wav(&self, path: &Path) -> Result<(), FeatureError> {
        let wav_err = |e: hound::Error| FeatureError::Wav {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)
    }
}

/// Analysis settings shared by all extractors. Times are in seconds,
/// frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_len: f64,
    pub hop: f64,
    /// Defaults to the next power of two covering the window.
    pub fft_size: Option<usize>,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fbank_bins: usize,
    pub preemphasis: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Pitch analysis window; must span two periods of `f0_min`.
    pub f0_window_len: f64,
    pub voicing_threshold: f64,
    /// Defaults to `round(2 + sample_rate / 1000)`.
    pub lpc_order: Option<usize>,
    pub formant_max_bandwidth: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_len: 0.025,
            hop: 0.010,
            fft_size: None,
            n_mels: 80,
            n_mfcc: 13,
            fbank_bins: 23,
            preemphasis: 0.97,
            f0_min: 50.0,
            f0_max: 450.0,
            f0_window_len: 0.040,
            voicing_threshold: 0.5,
            lpc_order: None,
            formant_max_bandwidth: 400.0,
        }
    }
}

/// Window, hop and FFT sizes in samples for one sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Framing {
    pub fn frame_count(&self, n_samples: usize) -> Result<usize, FeatureError> {
        frame_count(n_samples, self.window, self.hop)
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Time of the first frame's window midpoint.
    pub fn t0(&self) -> f64 {
        self.window as f64 / 2.0 / self.sample_rate as f64
    }
}

pub(crate) fn frame_count(n: usize, window: usize, hop: usize) -> Result<usize, FeatureError> {
    if n < window {
        return Err(FeatureError::TooShort { samples: n, window });
    }
    Ok((n - window) / hop + 1)
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::Config(m.to_string()));
        if !(self.hop > 0.0 && self.window_len > self.hop) {
            return bad("need window_len > hop > 0");
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max) {
            return bad("need 0 < f0_min < f0_max");
        }
        if self.n_mels == 0 || self.fbank_bins == 0 {
            return bad("mel band counts must be positive");
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad("need 1 <= n_mfcc <= n_mels");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.voicing_threshold) {
            return bad("voicing_threshold must be in [0, 1]");
        }
        if self.formant_max_bandwidth <= 0.0 {
            return bad("formant_max_bandwidth must be positive");
        }
        if let Some(n) = self.fft_size {
            if !n.is_power_of_two() {
                return bad("fft_size must be a power of two");
            }
        }
        if self.lpc_order == Some(0) {
            return bad("lpc_order must be positive");
        }
        Ok(())
    }

    pub fn framing(&self, sample_rate: u32) -> Result<Framing, FeatureError> {
        self.validate()?;
        let sr = sample_rate as f64;
        let window = (self.window_len * sr).round() as usize;
        let hop = (self.hop * sr).round() as usize;
        if hop == 0 || window <= hop {
            return Err(FeatureError::Config(format!(
                "window {window} / hop {hop} samples at {sample_rate} Hz"
            )));
        }
        let fft_size = match self.fft_size {
            Some(n) if n < window => {
                return Err(FeatureError::Config(format!(
                    "fft_size {n} shorter than {window}-sample window"
                )))
            }
            Some(n) => n,
            None => window.next_power_of_two(),
        };
        Ok(Framing {
            sample_rate,
            window,
            hop,
            fft_size,
        })
    }

    pub fn lpc_order_for(&self, sample_rate: u32) -> usize {
        self.lpc_order
            .unwrap_or_else(|| (2.0 + sample_rate as f64 / 1000.0).round() as usize)
    }
}

/// Feature families the pipeline can write to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mfcc,
    LogMel,
    Fbank,
    F0,
    Formants,
    Centroid,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Mfcc,
        FeatureKind::LogMel,
        FeatureKind::Fbank,
        FeatureKind::F0,
        FeatureKind::Formants,
        FeatureKind::Centroid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::LogMel => "log_mel",
            FeatureKind::Fbank => "fbank",
            FeatureKind::F0 => "f0",
            FeatureKind::Formants => "formants",
            FeatureKind::Centroid => "centroid",
        }
    }

    pub fn extract(self, w: &WaveBuffer, cfg: &FeatureConfig) -> Result<FrameMatrix, FeatureError> {
        match self {
            FeatureKind::Mfcc => mfcc(w, cfg),
            FeatureKind::LogMel => log_mel(w, cfg),
            FeatureKind::Fbank => fbank(w, cfg),
            FeatureKind::F0 => f0_track(w, cfg),
            FeatureKind::Formants => formants(w, cfg),
            FeatureKind::Centroid => spectral_centroid(w, cfg),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = if s == "mel" { "log_mel" } else { s };
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown feature {s:?}"))
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}
