//! Phone alignments: TIMIT `.phn` files and the labelled CSV format.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

/// ARPABET symbols as used by TIMIT (61-symbol set) and CMUdict-style
/// alignments such as L2-ARCTIC, plus their silence markers.
pub mod arpabet {
    pub const SYMBOLS: &[&str] = &[
        "iy", "ih", "eh", "ey", "ae", "aa", "aw", "ay", "ah", "ao", "oy", "ow", "uh", "uw", "ux",
        "er", "ax", "ix", "axr", "ax-h", "jh", "ch", "b", "d", "g", "p", "t", "k", "dx", "s", "sh",
        "z", "zh", "f", "th", "v", "dh", "m", "n", "ng", "em", "nx", "en", "eng", "l", "r", "w",
        "y", "hh", "hv", "el", "bcl", "dcl", "gcl", "pcl", "tcl", "kcl", "q", "pau", "epi", "h#",
        "sil", "sp", "spn",
    ];

    /// Monophthongs and diphthongs.
    pub const VOWELS: &[&str] = &[
        "iy", "ih", "eh", "ae", "ah", "aa", "ao", "uh", "uw", "er", "ey", "ay", "oy", "aw", "ow",
    ];

    pub const SILENCE: &[&str] = &["h#", "pau", "epi", "sil", "sp", "spn"];

    /// Lower-cases and strips lexical stress digits (`AH0` -> `ah`).
    pub fn canonical(phone: &str) -> String {
        phone
            .trim()
            .trim_end_matches(|c: char| c.is_ascii_digit())
            .to_ascii_lowercase()
    }

    pub fn is_known(phone: &str) -> bool {
        SYMBOLS.contains(&canonical(phone).as_str())
    }

    pub fn is_vowel(phone: &str) -> bool {
        VOWELS.contains(&canonical(phone).as_str())
    }
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: start {start} is not before end {end}")]
    Order { line: usize, start: f64, end: f64 },
    #[error("line {line}: negative time {time}")]
    Negative { line: usize, time: f64 },
    #[error("TIMIT .phn alignments need a sample rate")]
    MissingSampleRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub utterance_id: String,
    pub start: f64,
    pub end: f64,
    pub phone: String,
    pub speaker: String,
    pub dataset: String,
    pub gender: String,
}

/// Segments in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentTable {
    pub rows: Vec<Segment>,
}

impl SegmentTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Indices of rows whose phone is not in the ARPABET inventory.
    pub fn unknown_phones(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, s)| !arpabet::is_known(&s.phone))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn for_utterance(&self, utterance_id: &str) -> SegmentTable {
        SegmentTable {
            rows: self
                .rows
                .iter()
                .filter(|s| s.utterance_id == utterance_id)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentFormat {
    Csv,
    TimitPhn,
}

impl SegmentFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(SegmentFormat::Csv),
            "phn" => Some(SegmentFormat::TimitPhn),
            _ => None,
        }
    }
}

/// Labels for formats that carry only times and phones.
#[derive(Debug, Clone, Default)]
pub struct SegmentContext {
    pub sample_rate: Option<u32>,
    /// Defaults to the file stem.
    pub utterance_id: Option<String>,
    pub speaker: String,
    pub dataset: String,
    /// Defaults to the TIMIT speaker-id convention (`f...`/`m...`), else
    /// `"unknown"`.
    pub gender: Option<String>,
}

pub fn read_segments(
    path: &Path,
    format: SegmentFormat,
    ctx: &SegmentContext,
) -> Result<SegmentTable, SegmentError> {
    let text = fs::read_to_string(path).map_err(|source| SegmentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        SegmentFormat::Csv => parse_csv(&text),
        SegmentFormat::TimitPhn => {
            let mut ctx = ctx.clone();
            if ctx.utterance_id.is_none() {
                ctx.utterance_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
            parse_phn(&text, &ctx)
        }
    }
}

fn check_times(line: usize, start: f64, end: f64) -> Result<(), SegmentError> {
    for t in [start, end] {
        if !t.is_finite() {
            return Err(SegmentError::Malformed {
                line,
                reason: format!("non-finite time {t}"),
            });
        }
        if t < 0.0 {
            return Err(SegmentError::Negative { line, time: t });
        }
    }
    if start >= end {
        return Err(SegmentError::Order { line, start, end });
    }
    Ok(())
}

/// Parses `begin_sample end_sample phone` lines. Blank lines are skipped;
/// reported line numbers are 1-based.
pub fn parse_phn(text: &str, ctx: &SegmentContext) -> Result<SegmentTable, SegmentError> {
    let sr = ctx.sample_rate.ok_or(SegmentError::MissingSampleRate)? as f64;
    let utt = ctx.utterance_id.clone().unwrap_or_default();
    let gender = ctx.gender.clone().unwrap_or_else(|| {
        match ctx.speaker.chars().next().map(|c| c.to_ascii_lowercase()) {
            Some('f') => "f".into(),
            Some('m') => "m".into(),
            _ => "unknown".into(),
        }
    });
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [b, e, phone] = fields[..] else {
            return Err(SegmentError::Malformed {
                line,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        };
        let parse = |s: &str| {
            s.parse::<u64>().map_err(|_| SegmentError::Malformed {
                line,
                reason: format!("bad sample index {s:?}"),
            })
        };
        let (b, e) = (parse(b)?, parse(e)?);
        if b >= e {
            return Err(SegmentError::Order {
                line,
                start: b as f64 / sr,
                end: e as f64 / sr,
            });
        }
        let (start, end) = (b as f64 / sr, e as f64 / sr);
        check_times(line, start, end)?;
        rows.push(Segment {
            utterance_id: utt.clone(),
            start,
            end,
            phone: phone.to_string(),
            speaker: ctx.speaker.clone(),
            dataset: ctx.dataset.clone(),
            gender: gender.clone(),
        });
    }
    Ok(SegmentTable { rows })
}

#[derive(Deserialize)]
struct CsvRow {
    utterance: String,
    start: f64,
    end: f64,
    phone: String,
    speaker: String,
    dataset: String,
    gender: String,
}

pub const CSV_HEADER: &str = "utterance,start,end,phone,speaker,dataset,gender";

/// Parses the labelled alignment CSV. Line numbers count the header as line 1.
pub fn parse_csv(text: &str) -> Result<SegmentTable, SegmentError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| SegmentError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.join(",") != CSV_HEADER {
        return Err(SegmentError::Malformed {
            line: 1,
            reason: format!("expected header {CSV_HEADER:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let fallback = i + 2;
        let record = record.map_err(|e| SegmentError::Malformed {
            line: e.position().map_or(fallback, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(fallback, |p| p.line() as usize);
        let row: CsvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| SegmentError::Malformed {
                line,
                reason: e.to_string(),
            })?;
        check_times(line, row.start, row.end)?;
        rows.push(Segment {
            utterance_id: row.utterance,
            start: row.start,
            end: row.end,
            phone: row.phone,
            speaker: row.speaker,
            dataset: row.dataset,
            gender: row.gender,
        });
    }
    Ok(SegmentTable { rows })
}

/// Serializes a table in the CSV alignment format.
pub fn to_csv(table: &SegmentTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.utterance_id, s.start, s.end, s.phone, s.speaker, s.dataset, s.gender
        ));
    }
    out
}
