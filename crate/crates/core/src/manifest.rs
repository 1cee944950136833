//! JSON corpus manifests.
//!
//! ```json
//! {
//!   "dataset": "timit",
//!   "utterances": [
//!     {"wav": "a/sa1.wav", "alignment": "a/sa1.phn", "speaker": "fcjf0", "gender": "f"}
//!   ],
//!   "labels": ["phone", "speaker"],
//!   "features": {"kinds": ["mfcc", "f0"], "window_len": 0.025},
//!   "out_dir": "out"
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `labels`,
//! `features` and each utterance's `gender` and `id` are optional.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureError, FeatureKind, WaveBuffer};
use crate::segments::{read_segments, SegmentContext, SegmentError, SegmentFormat, SegmentTable};
use crate::types::LabelKey;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest is missing key `{0}`")]
    MissingKey(String),
    #[error("manifest key `{key}` must be {expected}")]
    WrongType { key: String, expected: &'static str },
    #[error("manifest key `{key}` points to missing file {path}")]
    DanglingPath { key: String, path: PathBuf },
    #[error("manifest key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEntry {
    /// Defaults to the WAV file stem.
    pub id: String,
    pub wav: PathBuf,
    pub alignment: PathBuf,
    pub speaker: String,
    pub gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset: String,
    pub utterances: Vec<UtteranceEntry>,
    pub labels: Vec<LabelKey>,
    pub kinds: Vec<FeatureKind>,
    pub features: FeatureConfig,
    pub out_dir: PathBuf,
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, ManifestError> {
    obj.get(key).ok_or_else(|| ManifestError::MissingKey(path.to_string()))
}

fn string(v: &Value, key: &str) -> Result<String, ManifestError> {
    v.as_str().map(str::to_string).ok_or_else(|| ManifestError::WrongType {
        key: key.to_string(),
        expected: "a string",
    })
}

fn existing(root: &Path, v: &Value, key: &str) -> Result<PathBuf, ManifestError> {
    let path = root.join(string(v, key)?);
    if !path.is_file() {
        return Err(ManifestError::DanglingPath {
            key: key.to_string(),
            path,
        });
    }
    Ok(path)
}

fn parse_list<T: std::str::FromStr<Err = String>>(v: &Value, key: &str) -> Result<Vec<T>, ManifestError> {
    let items = v.as_array().ok_or_else(|| ManifestError::WrongType {
        key: key.to_string(),
        expected: "a list of strings",
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let k = format!("{key}[{i}]");
            string(item, &k)?
                .parse()
                .map_err(|reason| ManifestError::Invalid { key: k, reason })
        })
        .collect()
}

/// Parses manifest text; relative paths resolve against `root`.
pub fn parse_manifest(text: &str, root: &Path) -> Result<Manifest, ManifestError> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value.as_object().ok_or_else(|| ManifestError::WrongType {
        key: "<root>".into(),
        expected: "an object",
    })?;
    let dataset = string(required(obj, "dataset", "dataset")?, "dataset")?;
    let list = required(obj, "utterances", "utterances")?
        .as_array()
        .ok_or_else(|| ManifestError::WrongType {
            key: "utterances".into(),
            expected: "a list",
        })?;
    let mut utterances = Vec::with_capacity(list.len());
    let mut seen = BTreeSet::new();
    for (i, u) in list.iter().enumerate() {
        let prefix = format!("utterances[{i}]");
        let u = u.as_object().ok_or_else(|| ManifestError::WrongType {
            key: prefix.clone(),
            expected: "an object",
        })?;
        let key = |k: &str| format!("{prefix}.{k}");
        let wav = existing(root, required(u, "wav", &key("wav"))?, &key("wav"))?;
        let alignment = existing(root, required(u, "alignment", &key("alignment"))?, &key("alignment"))?;
        if SegmentFormat::from_path(&alignment).is_none() {
            return Err(ManifestError::Invalid {
                key: key("alignment"),
                reason: "expected a .csv or .phn file".into(),
            });
        }
        let speaker = string(required(u, "speaker", &key("speaker"))?, &key("speaker"))?;
        let gender = u.get("gender").map(|g| string(g, &key("gender"))).transpose()?;
        let id = match u.get("id") {
            Some(v) => string(v, &key("id"))?,
            None => wav
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        if !seen.insert(id.clone()) {
            return Err(ManifestError::Invalid {
                key: key("id"),
                reason: format!("duplicate utterance id {id:?}"),
            });
        }
        utterances.push(UtteranceEntry {
            id,
            wav,
            alignment,
            speaker,
            gender,
        });
    }
    let labels = match obj.get("labels") {
        Some(v) => parse_list(v, "labels")?,
        None => LabelKey::ALL.to_vec(),
    };
    let (kinds, features) = match obj.get("features") {
        None => (FeatureKind::ALL.to_vec(), FeatureConfig::default()),
        Some(v) => {
            let mut f = v
                .as_object()
                .ok_or_else(|| ManifestError::WrongType {
                    key: "features".into(),
                    expected: "an object",
                })?
                .clone();
            let kinds = match f.remove("kinds") {
                Some(k) => parse_list(&k, "features.kinds")?,
                None => FeatureKind::ALL.to_vec(),
            };
            let cfg: FeatureConfig =
                serde_json::from_value(Value::Object(f)).map_err(|e| ManifestError::Invalid {
                    key: "features".into(),
                    reason: e.to_string(),
                })?;
            cfg.validate().map_err(|e| ManifestError::Invalid {
                key: "features".into(),
                reason: e.to_string(),
            })?;
            (kinds, cfg)
        }
    };
    let out_dir = root.join(string(required(obj, "out_dir", "out_dir")?, "out_dir")?);
    Ok(Manifest {
        dataset,
        utterances,
        labels,
        kinds,
        features,
        out_dir,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, root)
}

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error(transparent)]
    Segments(#[from] SegmentError),
    #[error(transparent)]
    Wav(#[from] FeatureError),
}

impl Manifest {
    /// Alignment rows for one utterance. `.phn` sample offsets are read at
    /// the WAV's sample rate; CSV tables are filtered to this utterance.
    pub fn segments(&self, u: &UtteranceEntry) -> Result<SegmentTable, AlignmentError> {
        let format = SegmentFormat::from_path(&u.alignment).unwrap_or(SegmentFormat::Csv);
        let table = match format {
            SegmentFormat::Csv => {
                read_segments(&u.alignment, format, &SegmentContext::default())?.for_utterance(&u.id)
            }
            SegmentFormat::TimitPhn => {
                let ctx = SegmentContext {
                    sample_rate: Some(WaveBuffer::probe_sample_rate(&u.wav)?),
                    utterance_id: Some(u.id.clone()),
                    speaker: u.speaker.clone(),
                    dataset: self.dataset.clone(),
                    gender: u.gender.clone(),
                };
                read_segments(&u.alignment, format, &ctx)?
            }
        };
        Ok(table)
    }
}
