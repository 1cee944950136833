//! End-to-end runs over a manifest and a directory of layer tensors.
//!
//! Layer directories hold `<model>/<utterance>/layer_<k>.rept`, or just
//! `<utterance>/layer_<k>.rept` for a single model named after the
//! directory. Each utterance is processed independently; one that fails
//! to load is logged, counted and left out of every statistic.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use log::warn;

use repstat_core::cka::{cka_sweep, CkaVariant};
use repstat_core::cluster::{normalization_delta, u_sweep, DistanceSpec};
use repstat_core::features::{acoustic_target, AcousticTarget, FeatureKind, WaveBuffer};
use repstat_core::manifest::{Manifest, UtteranceEntry};
use repstat_core::par;
use repstat_core::pool::{pool, stack_layers, PoolError, PoolingSpec};
use repstat_core::report::{SweepKind, SweepReport};
use repstat_core::segments::SegmentTable;
use repstat_core::tensor::{read_tensor, write_tensor};
use repstat_core::{LabelKey, PooledMatrix};

use crate::correlation::{correlate_downstream, DownstreamCorrelation, DownstreamTable};
use crate::svg::emit_svg;

/// Classic features evaluated alongside the models.
pub const BASELINES: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::LogMel, FeatureKind::Fbank];

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub succeeded: usize,
    pub failures: Vec<Failure>,
    pub outputs: Vec<PathBuf>,
}

impl RunSummary {
    /// 0 when everything succeeded, 1 on partial failure, 2 when nothing did.
    pub fn exit_code(&self) -> i32 {
        match (self.succeeded, self.failures.len()) {
            (_, 0) => 0,
            (0, _) => 2,
            _ => 1,
        }
    }

    fn fail(&mut self, item: &str, reason: impl fmt::Display) {
        warn!("{item}: {reason}");
        self.failures.push(Failure {
            item: item.to_string(),
            reason: reason.to_string(),
        });
    }
}

/// Writes every requested feature for every utterance to
/// `out_dir/features/<kind>/<utterance>.rept`.
pub fn run_features(manifest: &Manifest) -> Result<RunSummary> {
    let root = manifest.out_dir.join("features");
    for kind in &manifest.kinds {
        fs::create_dir_all(root.join(kind.as_str()))
            .with_context(|| format!("creating {}", root.display()))?;
    }
    let results = par::map_slice(&manifest.utterances, |u| -> Result<Vec<PathBuf>> {
        let wave = WaveBuffer::read_wav(&u.wav)?;
        let mut written = Vec::new();
        for kind in &manifest.kinds {
            let mut m = kind.extract(&wave, &manifest.features)?;
            m.set_utterance_id(u.id.clone());
            let path = root.join(kind.as_str()).join(format!("{}.rept", u.id));
            write_tensor(&m, &path)?;
            written.push(path);
        }
        Ok(written)
    });
    let mut summary = RunSummary::default();
    for (u, r) in manifest.utterances.iter().zip(results) {
        match r {
            Ok(paths) => {
                summary.succeeded += 1;
                summary.outputs.extend(paths);
            }
            Err(e) => summary.fail(&u.id, format!("{e:#}")),
        }
    }
    Ok(summary)
}

fn layer_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("layer_{k}.rept"))
}

fn has_layers(dir: &Path) -> bool {
    layer_file(dir, 0).is_file()
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// `(model, directory)` pairs in name order.
pub fn discover_models(layers_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let dirs = subdirs(layers_dir)?;
    if dirs.iter().any(|d| has_layers(d)) {
        let name = layers_dir
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "model".into());
        return Ok(vec![(name, layers_dir.to_path_buf())]);
    }
    let mut models = Vec::new();
    for d in dirs {
        if subdirs(&d)?.iter().any(|u| has_layers(u)) {
            let name = d.file_name().unwrap().to_string_lossy().into_owned();
            models.push((name, d));
        }
    }
    if models.is_empty() {
        bail!("no layer_0.rept files under {}", layers_dir.display());
    }
    Ok(models)
}

/// What to pool alongside the model layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Acoustic(AcousticTarget),
    Feature(FeatureKind),
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Acoustic(a) => a.as_str(),
            Target::Feature(f) => f.as_str(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(a) = s.parse::<AcousticTarget>() {
            return Ok(Target::Acoustic(a));
        }
        match s.parse::<FeatureKind>() {
            Ok(f @ (FeatureKind::Mfcc | FeatureKind::LogMel | FeatureKind::Fbank)) => Ok(Target::Feature(f)),
            _ => Err(format!("unknown target {s:?}")),
        }
    }
}

/// Pooled sources aligned row for row: per model, per layer; then extras
/// (target and baselines) in request order.
#[derive(Debug, Clone)]
pub struct Aligned {
    pub models: Vec<(String, Vec<PooledMatrix>)>,
    pub extras: Vec<(String, PooledMatrix)>,
    pub summary: RunSummary,
}

struct UttRows {
    models: Vec<Vec<PooledMatrix>>,
    extras: Vec<PooledMatrix>,
}

fn pooled_or_empty(r: Result<repstat_core::pool::PoolOutcome, PoolError>) -> Result<Option<PooledMatrix>> {
    match r {
        Ok(o) => Ok(Some(o.pooled)),
        Err(PoolError::NoSegments { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn keep_rows(m: PooledMatrix, keep: impl Fn(&repstat_core::LabelRecord) -> bool) -> Option<PooledMatrix> {
    let idx: Vec<usize> = (0..m.rows()).filter(|&i| keep(&m.labels()[i])).collect();
    (!idx.is_empty()).then(|| m.select_rows(&idx))
}

fn load_utterance(
    manifest: &Manifest,
    u: &UtteranceEntry,
    models: &[(String, PathBuf)],
    extras: &[Target],
    spec: &PoolingSpec,
) -> Result<Option<UttRows>> {
    let segments: SegmentTable = manifest.segments(u)?;
    let mut all: Vec<Option<PooledMatrix>> = Vec::new();
    let mut shape = Vec::new();
    for (name, dir) in models {
        let udir = dir.join(&u.id);
        if !has_layers(&udir) {
            bail!("model {name} has no layers for this utterance");
        }
        let mut k = 0;
        while layer_file(&udir, k).is_file() {
            let mut frames = read_tensor(&layer_file(&udir, k))
                .with_context(|| format!("{}", layer_file(&udir, k).display()))?;
            frames.set_utterance_id(u.id.clone());
            all.push(pooled_or_empty(pool(&frames, &segments, spec))?);
            k += 1;
        }
        shape.push(k);
    }
    if !extras.is_empty() {
        let wave = WaveBuffer::read_wav(&u.wav)?;
        for t in extras {
            let m = match t {
                Target::Acoustic(a) => acoustic_target(&wave, &manifest.features, &segments, *a)?
                    .pooled
                    .and_then(|p| keep_rows(p, |l| spec.keeps(&l.phone))),
                Target::Feature(f) => {
                    let mut frames = f.extract(&wave, &manifest.features)?;
                    frames.set_utterance_id(u.id.clone());
                    pooled_or_empty(pool(&frames, &segments, spec))?
                }
            };
            all.push(m);
        }
    }
    let Some(all) = all.into_iter().collect::<Option<Vec<_>>>() else {
        return Ok(None);
    };
    let mut common: BTreeSet<usize> = all[0].labels().iter().map(|l| l.segment).collect();
    for m in &all[1..] {
        let here: BTreeSet<usize> = m.labels().iter().map(|l| l.segment).collect();
        common = common.intersection(&here).copied().collect();
    }
    if common.is_empty() {
        return Ok(None);
    }
    let mut aligned = all
        .into_iter()
        .map(|m| keep_rows(m, |l| common.contains(&l.segment)).expect("non-empty intersection"));
    let models = shape
        .iter()
        .map(|&n| aligned.by_ref().take(n).collect())
        .collect();
    Ok(Some(UttRows {
        models,
        extras: aligned.collect(),
    }))
}

/// Pools every model layer and every extra source over the manifest,
/// keeping only segments present in all of them.
pub fn load_aligned(
    manifest: &Manifest,
    layers_dir: &Path,
    extras: &[Target],
    spec: &PoolingSpec,
) -> Result<Aligned> {
    let models = discover_models(layers_dir)?;
    let results = par::map_slice(&manifest.utterances, |u| load_utterance(manifest, u, &models, extras, spec));
    let mut summary = RunSummary::default();
    let mut kept: Vec<UttRows> = Vec::new();
    let mut depth: Option<Vec<usize>> = None;
    for (u, r) in manifest.utterances.iter().zip(results) {
        match r {
            Ok(Some(rows)) => {
                let d: Vec<usize> = rows.models.iter().map(Vec::len).collect();
                match &depth {
                    Some(expected) if *expected != d => {
                        summary.fail(&u.id, format!("layer counts {d:?} differ from {expected:?}"));
                        continue;
                    }
                    _ => depth = Some(d),
                }
                summary.succeeded += 1;
                kept.push(rows);
            }
            Ok(None) => {
                summary.succeeded += 1;
                warn!("{}: no segments shared by every source", u.id);
            }
            Err(e) => summary.fail(&u.id, format!("{e:#}")),
        }
    }
    if kept.is_empty() {
        bail!(
            "no segments left after intersecting all sources ({} utterances failed)",
            summary.failures.len()
        );
    }
    let stack = |pick: &dyn Fn(&UttRows) -> &PooledMatrix| -> Result<PooledMatrix> {
        let parts: Vec<PooledMatrix> = kept.iter().map(|r| pick(r).clone()).collect();
        Ok(PooledMatrix::vstack(&parts)?)
    };
    let mut out_models = Vec::new();
    for (mi, (name, _)) in models.iter().enumerate() {
        let layers = (0..kept[0].models[mi].len())
            .map(|k| stack(&|r| &r.models[mi][k]))
            .collect::<Result<Vec<_>>>()?;
        out_models.push((name.clone(), layers));
    }
    let out_extras = extras
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((t.as_str().to_string(), stack(&|r| &r.extras[i])?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Aligned {
        models: out_models,
        extras: out_extras,
        summary,
    })
}

fn pooling_spec(vowels_only: bool) -> PoolingSpec {
    if vowels_only {
        PoolingSpec::vowels()
    } else {
        PoolingSpec::default()
    }
}

/// Writes pooled layers as CSV under `out_dir/pooled/<model>/layer_<k>.csv`.
pub fn run_pool(manifest: &Manifest, layers_dir: &Path, vowels_only: bool) -> Result<RunSummary> {
    let aligned = load_aligned(manifest, layers_dir, &[], &pooling_spec(vowels_only))?;
    let mut summary = aligned.summary;
    for (model, layers) in &aligned.models {
        let dir = manifest.out_dir.join("pooled").join(model);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (k, m) in layers.iter().enumerate() {
            let path = dir.join(format!("layer_{k}.csv"));
            fs::write(&path, pooled_csv(m)?).with_context(|| format!("writing {}", path.display()))?;
            summary.outputs.push(path);
        }
    }
    Ok(summary)
}

pub fn pooled_csv(m: &PooledMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["utterance_id", "segment", "start", "end", "phone", "speaker", "dataset", "gender"]
        .map(String::from)
        .to_vec();
    header.extend((0..m.cols()).map(|c| format!("d{c}")));
    w.write_record(&header)?;
    for (i, l) in m.labels().iter().enumerate() {
        let mut rec = vec![
            l.utterance_id.clone(),
            l.segment.to_string(),
            l.start.to_string(),
            l.end.to_string(),
            l.phone.clone(),
            l.speaker.clone(),
            l.dataset.clone(),
            l.gender.clone(),
        ];
        rec.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub report: SweepReport,
    pub summary: RunSummary,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

fn write_sweep(manifest: &Manifest, stem: &str, report: SweepReport, mut summary: RunSummary) -> Result<SweepRun> {
    fs::create_dir_all(&manifest.out_dir).with_context(|| format!("creating {}", manifest.out_dir.display()))?;
    let csv = manifest.out_dir.join(format!("{stem}.csv"));
    let svg = manifest.out_dir.join(format!("{stem}.svg"));
    report.write_csv(&csv)?;
    emit_svg(&report, &svg)?;
    summary.outputs.extend([csv.clone(), svg.clone()]);
    Ok(SweepRun {
        report,
        summary,
        csv,
        svg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CkaRequest {
    pub target: Target,
    pub variant: CkaVariant,
    pub vowels_only: bool,
    /// Also sweep MFCC, log-mel and fbank as single-layer models.
    pub baselines: bool,
}

/// CKA of every layer of every model against the target, written to
/// `out_dir/cka_<target>_<variant>[_vowels].{csv,svg}`.
pub fn run_cka(manifest: &Manifest, layers_dir: &Path, req: &CkaRequest) -> Result<SweepRun> {
    let mut extras = vec![req.target];
    if req.baselines {
        extras.extend(
            BASELINES
                .iter()
                .map(|&b| Target::Feature(b))
                .filter(|b| *b != req.target),
        );
    }
    let aligned = load_aligned(manifest, layers_dir, &extras, &pooling_spec(req.vowels_only))?;
    let (name, target) = &aligned.extras[0];
    let mut report = SweepReport::new(SweepKind::Cka);
    let sources = aligned
        .models
        .iter()
        .cloned()
        .chain(aligned.extras[1..].iter().map(|(n, m)| (n.clone(), vec![m.clone()])));
    for (model, layers) in sources {
        let stack = stack_layers(model.clone(), layers)?;
        report.extend(cka_sweep(&stack, target, name, req.variant).with_context(|| format!("model {model}"))?);
    }
    let stem = format!(
        "cka_{}_{}{}",
        req.target,
        req.variant,
        if req.vowels_only { "_vowels" } else { "" }
    );
    write_sweep(manifest, &stem, report, aligned.summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgURequest {
    pub label: LabelKey,
    pub distance: DistanceSpec,
    /// Report AvgU after column standardization minus AvgU before it.
    pub normalized: bool,
    pub baselines: bool,
}

/// Per-layer AvgU (or its normalization delta) for every model, written to
/// `out_dir/avgu_<label>_<metric>[_norm].{csv,svg}`.
pub fn run_avgu(manifest: &Manifest, layers_dir: &Path, req: &AvgURequest) -> Result<SweepRun> {
    let extras: Vec<Target> = if req.baselines {
        BASELINES.iter().map(|&b| Target::Feature(b)).collect()
    } else {
        Vec::new()
    };
    let aligned = load_aligned(manifest, layers_dir, &extras, &PoolingSpec::default())?;
    let mut report = SweepReport::new(SweepKind::AvgU);
    let sources = aligned
        .models
        .iter()
        .cloned()
        .chain(aligned.extras.iter().map(|(n, m)| (n.clone(), vec![m.clone()])));
    for (model, layers) in sources {
        let stack = stack_layers(model.clone(), layers)?;
        let r = if req.normalized {
            normalization_delta(&stack, req.label, &req.distance)
        } else {
            u_sweep(&stack, req.label, &req.distance)
        };
        report.extend(r.with_context(|| format!("model {model}"))?);
    }
    let stem = format!(
        "avgu_{}_{}{}",
        req.label,
        req.distance.metric,
        if req.normalized { "_norm" } else { "" }
    );
    write_sweep(manifest, &stem, report, aligned.summary)
}

/// Reads every AvgU sweep CSV in `sweeps_dir` and correlates per-model
/// peak AvgU with the downstream table.
pub fn run_correlate(
    sweeps_dir: &Path,
    downstream: &Path,
    label: LabelKey,
    seed: u64,
) -> Result<DownstreamCorrelation> {
    let mut paths: Vec<PathBuf> = fs::read_dir(sweeps_dir)
        .with_context(|| format!("reading {}", sweeps_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    let sweeps: Vec<SweepReport> = paths
        .iter()
        .filter_map(|p| SweepReport::read_csv(p).ok())
        .filter(|r| r.kind == SweepKind::AvgU)
        .collect();
    if sweeps.is_empty() {
        bail!("no AvgU sweep CSVs in {}", sweeps_dir.display());
    }
    let table = DownstreamTable::read(downstream)?;
    Ok(correlate_downstream(&sweeps, &table, label, seed)?)
}

/// Renders a sweep CSV as SVG.
pub fn run_report(input: &Path, svg: &Path) -> Result<()> {
    let report = SweepReport::read_csv(input)?;
    emit_svg(&report, svg)?;
    Ok(())
}
