//! Synthetic corpus shared by the integration and acceptance tests: vowel
//! and fricative segments with speaker-dependent pitch, TIMIT-style
//! alignments, and a toy model whose layers carry known structure.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repstat_core::features::{FeatureConfig, FeatureKind, WaveBuffer};
use repstat_core::tensor::write_tensor;
use repstat_core::FrameMatrix;

pub const SR: u32 = 16000;
pub const LAYER_RATE: f64 = 50.0;
pub const LAYER_T0: f64 = 0.01;
/// Layer of the toy model that is the MFCC stream itself.
pub const MFCC_LAYER: usize = 2;
/// Layer of the toy model that is a one-hot phone indicator.
pub const ONEHOT_LAYER: usize = 3;
pub const N_LAYERS: usize = 4;

pub const PHONES: [(&str, Option<(f64, f64)>); 7] = [
    ("aa", Some((730.0, 1090.0))),
    ("iy", Some((270.0, 2290.0))),
    ("uw", Some((300.0, 870.0))),
    ("ae", Some((660.0, 1720.0))),
    ("s", None),
    ("t", None),
    ("h#", None),
];

pub const SPEAKERS: [(&str, f64); 3] = [("mjfc0", 110.0), ("fdaw0", 210.0), ("mreb0", 140.0)];

pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub layers: PathBuf,
    pub ids: Vec<String>,
    /// Phones per utterance in alignment order.
    pub phones: Vec<Vec<String>>,
}

impl Corpus {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.root().join("out")
    }
}

fn resonate(x: &mut [f64], f: f64, bw: f64) {
    let sr = SR as f64;
    let r = (-PI * bw / sr).exp();
    let (a1, a2) = (2.0 * r * (2.0 * PI * f / sr).cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

fn segment_audio(rng: &mut ChaCha8Rng, phone: usize, f0: f64, n: usize) -> Vec<f64> {
    match PHONES[phone].1 {
        Some((f1, f2)) => {
            let period = SR as f64 / f0;
            let mut x: Vec<f64> = (0..n)
                .map(|i| if (i as f64 % period) < 1.0 { 1.0 } else { 0.0 })
                .collect();
            resonate(&mut x, f1, 80.0);
            resonate(&mut x, f2, 100.0);
            let peak = x.iter().fold(1e-9f64, |m, v| m.max(v.abs()));
            x.iter().map(|v| 0.5 * v / peak).collect()
        }
        None if PHONES[phone].0 == "h#" => (0..n).map(|_| rng.random_range(-1e-3..1e-3)).collect(),
        None => (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
    }
}

fn embedding(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Builds `n_utts` utterances of about one second each under a temp dir,
/// with a manifest and a one-model layer directory.
pub fn build_corpus(n_utts: usize, seed: u64) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let root = root.as_path();
    let layers = root.join("layers").join("toy");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 8;
    let phone_emb: Vec<Vec<f64>> = (0..PHONES.len()).map(|_| embedding(&mut rng, d)).collect();
    let speaker_emb: Vec<Vec<f64>> = (0..SPEAKERS.len()).map(|_| embedding(&mut rng, d)).collect();
    let mut entries = Vec::new();
    let mut ids = Vec::new();
    let mut all_phones = Vec::new();
    for u in 0..n_utts {
        let spk = u % SPEAKERS.len();
        let id = format!("utt{u:02}");
        let mut samples = Vec::new();
        let mut phn = String::new();
        let mut seq = Vec::new();
        let mut bounds = Vec::new();
        let mut order: Vec<usize> = vec![6];
        order.extend((0..7).map(|_| rng.random_range(0..6)));
        order.push(6);
        for &p in &order {
            let n = rng.random_range(1300..3200);
            let start = samples.len();
            samples.extend(segment_audio(&mut rng, p, SPEAKERS[spk].1, n));
            phn.push_str(&format!("{start} {} {}\n", samples.len(), PHONES[p].0));
            seq.push(PHONES[p].0.to_string());
            bounds.push((start as f64 / SR as f64, samples.len() as f64 / SR as f64, p));
        }
        let wave = WaveBuffer::new(samples, SR).unwrap();
        let wav = root.join(format!("{id}.wav"));
        wave.write_wav(&wav).unwrap();
        fs::write(root.join(format!("{id}.phn")), phn).unwrap();

        let udir = layers.join(&id);
        fs::create_dir_all(&udir).unwrap();
        let n_frames = ((wave.duration() - LAYER_T0) * LAYER_RATE) as usize;
        let phone_at = |t: f64| bounds.iter().find(|b| t >= b.0 && t < b.1).map_or(6, |b| b.2);
        for k in 0..N_LAYERS {
            let m = match k {
                MFCC_LAYER => {
                    // read back through the WAV so the layer matches what the pipeline extracts
                    let mut m = FeatureKind::Mfcc
                        .extract(&WaveBuffer::read_wav(&wav).unwrap(), &FeatureConfig::default())
                        .unwrap();
                    m.set_utterance_id(id.clone());
                    m
                }
                _ => {
                    let mut rows = Vec::with_capacity(n_frames);
                    for f in 0..n_frames {
                        let p = phone_at(LAYER_T0 + f as f64 / LAYER_RATE);
                        let row: Vec<f64> = if k == ONEHOT_LAYER {
                            (0..PHONES.len()).map(|q| if q == p { 1.0 } else { 0.0 }).collect()
                        } else {
                            let (a, b) = if k == 0 { (0.2, 0.2) } else { (1.0, 0.3) };
                            (0..d)
                                .map(|c| a * phone_emb[p][c] + b * speaker_emb[spk][c] + 0.3 * rng.random_range(-1.0..1.0))
                                .collect()
                        };
                        rows.push(row);
                    }
                    let cols = rows[0].len();
                    FrameMatrix::from_rows_f64(id.clone(), &rows, cols, LAYER_RATE, LAYER_T0).unwrap()
                }
            };
            write_tensor(&m, &udir.join(format!("layer_{k}.rept"))).unwrap();
        }
        entries.push(format!(
            r#"{{"wav": "{id}.wav", "alignment": "{id}.phn", "speaker": "{}"}}"#,
            SPEAKERS[spk].0
        ));
        ids.push(id);
        all_phones.push(seq);
    }
    let manifest = root.join("manifest.json");
    fs::write(
        &manifest,
        format!(
            r#"{{"dataset": "synthetic", "out_dir": "out", "labels": ["phone", "speaker"],
  "features": {{"kinds": ["mfcc", "fbank", "f0", "formants", "centroid"]}},
  "utterances": [
    {}
  ]}}"#,
            entries.join(",\n    ")
        ),
    )
    .unwrap();
    Corpus {
        dir,
        manifest,
        layers: root.join("layers"),
        ids,
        phones: all_phones,
    }
}
