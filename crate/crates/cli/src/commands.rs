use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use weaksed::data::{
    frames_from_annotation, load_strong_annotations, load_weak_manifest, Bag, StrongAnnotation, WeakLabel,
    WeakManifestEntry,
};
use weaksed::dsp::{decode_wav, extract_logmel, read_features, write_features, FeatureMatrix};
use weaksed::eval::{
    curve_emit, frame_metrics, read_metric_log, transcription_export, write_transcriptions, Scored, Series,
};
use weaksed::loss::LossRegistry;
use weaksed::model::{threshold, ModelParams};
use weaksed::synth::{synthesize, write_corpus};
use weaksed::train::{Trainer, ValidationSet, FINAL_CHECKPOINT};

use crate::config::{Paths, RunConfig};
use crate::error::CliError;

pub const FRAMES_DIR: &str = "frames";
pub const TRANSCRIPTIONS_FILE: &str = "transcriptions.csv";
pub const FEATURE_EXT: &str = "wsmf";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn load_manifest(path: &Path) -> Result<Vec<WeakManifestEntry>, CliError> {
    load_weak_manifest(path).map_err(|e| CliError::at(path, e))
}

fn audio_path(cfg: &RunConfig, manifest: &Path, entry: &WeakManifestEntry) -> PathBuf {
    if entry.path.is_absolute() {
        return entry.path.clone();
    }
    match &cfg.paths.audio_root {
        Some(root) => root.join(&entry.path),
        None => manifest.parent().unwrap_or(Path::new("")).join(&entry.path),
    }
}

fn feature_path(cfg: &RunConfig, id: &str) -> PathBuf {
    cfg.paths.feature_cache.join(format!("{id}.{FEATURE_EXT}"))
}

fn up_to_date(feature: &Path, audio: &Path) -> bool {
    let modified = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    match (modified(feature), modified(audio)) {
        (Some(f), Some(a)) => f >= a,
        _ => false,
    }
}

fn extract_one(cfg: &RunConfig, audio: &Path, entry: &WeakManifestEntry) -> Result<FeatureMatrix, CliError> {
    let ctx = format!("recording `{}`", entry.id);
    let clip = decode_wav(audio).map_err(|e| CliError::data(&ctx, e))?;
    let mut feats = extract_logmel(&clip, &cfg.features).map_err(|e| CliError::data(&ctx, e))?;
    feats.id = entry.id.clone();
    Ok(feats)
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct FeatureStats {
    pub written: usize,
    pub skipped: usize,
}

/// Extracts features for every entry whose cache file is missing or older
/// than its audio. With `force` every entry is recomputed.
fn cache_features(
    cfg: &RunConfig,
    manifest: &Path,
    entries: &[WeakManifestEntry],
    force: bool,
    stats: &mut FeatureStats,
) -> Result<(), CliError> {
    create_dir(&cfg.paths.feature_cache)?;
    for entry in entries {
        let audio = audio_path(cfg, manifest, entry);
        let out = feature_path(cfg, &entry.id);
        if !force && up_to_date(&out, &audio) {
            stats.skipped += 1;
            continue;
        }
        let feats = extract_one(cfg, &audio, entry)?;
        write_features(&out, &feats).map_err(|e| CliError::data(format!("recording `{}`", entry.id), e))?;
        stats.written += 1;
    }
    Ok(())
}

/// Cached features for a manifest, extracting whatever is missing.
fn manifest_features(cfg: &RunConfig, manifest: &Path) -> Result<Vec<(WeakManifestEntry, FeatureMatrix)>, CliError> {
    let entries = load_manifest(manifest)?;
    cache_features(cfg, manifest, &entries, false, &mut FeatureStats::default())?;
    let hop = cfg.features.hop_seconds();
    entries
        .into_iter()
        .map(|e| {
            let f = read_features(feature_path(cfg, &e.id), &e.id, hop)
                .map_err(|err| CliError::data(format!("recording `{}`", e.id), err))?;
            Ok((e, f))
        })
        .collect()
}

fn weak_label(cfg: &RunConfig, entry: &WeakManifestEntry) -> WeakLabel {
    match &cfg.label_map {
        Some(map) => map.label(&entry.labels),
        None => WeakLabel::from_bool(!entry.labels.is_empty()),
    }
}

fn truth_frames(anns: &BTreeMap<String, StrongAnnotation>, id: &str, frames: usize, hop: f64) -> Vec<bool> {
    match anns.get(id) {
        Some(a) => frames_from_annotation(a, frames, hop),
        None => vec![false; frames],
    }
}

fn load_strong(path: &Path) -> Result<BTreeMap<String, StrongAnnotation>, CliError> {
    load_strong_annotations(path).map_err(|e| CliError::at(path, e))
}

pub fn features(cfg: &RunConfig, force: bool) -> Result<FeatureStats, CliError> {
    let mut manifests: Vec<&PathBuf> = [&cfg.paths.train_manifest, &cfg.paths.validation_manifest]
        .into_iter()
        .flatten()
        .collect();
    manifests.dedup();
    if manifests.is_empty() {
        return Err(CliError::Usage("no manifest configured under [paths]".into()));
    }
    let mut stats = FeatureStats::default();
    for m in manifests {
        let entries = load_manifest(m)?;
        cache_features(cfg, m, &entries, force, &mut stats)?;
    }
    Ok(stats)
}

fn validation_set(cfg: &RunConfig) -> Result<Option<ValidationSet>, CliError> {
    let (Some(manifest), Some(strong)) = (&cfg.paths.validation_manifest, &cfg.paths.validation_strong) else {
        return Ok(None);
    };
    let anns = load_strong(strong)?;
    let hop = cfg.features.hop_seconds();
    let mut set = ValidationSet {
        features: Vec::new(),
        truth: Vec::new(),
        threshold: cfg.threshold,
    };
    for (e, f) in manifest_features(cfg, manifest)? {
        set.truth.push(truth_frames(&anns, &e.id, f.frames(), hop));
        set.features.push(f);
    }
    Ok(Some(set))
}

pub fn train(cfg: &RunConfig, registry: &LossRegistry, progress: &mut dyn Write) -> Result<PathBuf, CliError> {
    let manifest = Paths::require(&cfg.paths.train_manifest, "train_manifest")?;
    let bags: Vec<Bag> = manifest_features(cfg, manifest)?
        .into_iter()
        .map(|(e, f)| Bag::new(f, weak_label(cfg, &e)))
        .collect();
    let validation = validation_set(cfg)?;
    let out = &cfg.paths.output_dir;
    create_dir(out)?;
    let snapshot = toml::to_string(cfg).map_err(|e| CliError::Data(format!("config snapshot: {e}")))?;
    let snapshot_path = out.join("config.toml");
    fs::write(&snapshot_path, snapshot).map_err(|e| io_err(&snapshot_path, e))?;

    let epochs = cfg.train.epochs;
    let mut trainer = Trainer::new(&cfg.train, registry).output_dir(out).on_epoch(|r| {
        let val = r.validation.map_or(String::new(), |v| format!(" f1 {:.4}", v.f1));
        // Progress is best effort; a closed stderr must not abort training.
        let _ = writeln!(progress, "epoch {}/{epochs} loss {:.6}{val}", r.epoch, r.train_loss);
    });
    if let Some(v) = &validation {
        trainer = trainer.validation(v);
    }
    trainer.run(&cfg.model, &bags)?;
    Ok(out.join(FINAL_CHECKPOINT))
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<usize, CliError> {
    let params = ModelParams::load(checkpoint, &cfg.model).map_err(|e| CliError::at(checkpoint, e))?;
    let items = manifest_features(cfg, manifest)?;
    let inputs: Vec<&FeatureMatrix> = items.iter().map(|(_, f)| f).collect();
    let preds = params.predict_many(&inputs, 8)?;
    let frames_dir = out.join(FRAMES_DIR);
    create_dir(&frames_dir)?;
    let hop = cfg.features.hop_seconds();
    let mut events = Vec::with_capacity(preds.len());
    for p in &preds {
        let path = frames_dir.join(format!("{}.csv", p.id));
        let mut text = String::from("frame,score\n");
        for (j, s) in p.scores.iter().enumerate() {
            text.push_str(&format!("{j},{s}\n"));
        }
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        events.push(transcription_export(&p.scores, hop, cfg.threshold));
    }
    write_transcriptions(
        out.join(TRANSCRIPTIONS_FILE),
        preds.iter().zip(&events).map(|(p, e)| (p.id.as_str(), e.as_slice())),
    )?;
    Ok(preds.len())
}

/// Reads a `frame,score` prediction file.
pub fn read_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, msg: &str| CliError::Data(format!("{}:{line}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("frame,score") {
        return Err(bad(1, "expected header `frame,score`"));
    }
    let mut scores = Vec::new();
    for (i, line) in lines.enumerate() {
        let (frame, score) = line.split_once(',').ok_or_else(|| bad(i + 2, "expected two fields"))?;
        if frame.trim().parse::<usize>().ok() != Some(i) {
            return Err(bad(i + 2, "frames must be numbered 0, 1, ..."));
        }
        let s: f64 = score.trim().parse().map_err(|_| bad(i + 2, "score is not a number"))?;
        scores.push(s);
    }
    Ok(scores)
}

pub fn eval(cfg: &RunConfig, predictions: &Path, strong: &Path, report: Option<&Path>) -> Result<String, CliError> {
    let anns = load_strong(strong)?;
    let frames_dir = predictions.join(FRAMES_DIR);
    let mut files: Vec<PathBuf> = fs::read_dir(&frames_dir)
        .map_err(|e| io_err(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no prediction files", frames_dir.display())));
    }
    let hop = cfg.features.hop_seconds();
    let mut rows = Vec::with_capacity(files.len());
    for f in &files {
        let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let scores = read_scores(f)?;
        let truth = truth_frames(&anns, &id, scores.len(), hop);
        rows.push((id, threshold(&scores, cfg.threshold), truth));
    }
    let scored: Vec<Scored> = rows
        .iter()
        .map(|(id, pred, truth)| Scored { id, pred, truth })
        .collect();
    let result = frame_metrics(&scored)?;
    if let Some(path) = report {
        result.write_csv(path)?;
    }
    Ok(result.summary())
}

/// `label=path` or a bare path, labelled by its parent directory.
pub fn parse_log_arg(arg: &str) -> (String, PathBuf) {
    if let Some((label, path)) = arg.split_once('=') {
        return (label.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(arg);
    let label = path
        .parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
    (label, path)
}

pub fn plot(logs: &[String], stem: &Path) -> Result<(), CliError> {
    let mut series = Vec::with_capacity(logs.len());
    for arg in logs {
        let (label, path) = parse_log_arg(arg);
        let log = read_metric_log(&path).map_err(|e| CliError::at(&path, e))?;
        series.push(Series::from_log(label, &log));
    }
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    curve_emit(&series, stem)?;
    Ok(())
}

pub fn synth(cfg: &RunConfig, seed: u64, out: &Path) -> Result<usize, CliError> {
    let clips = synthesize(&cfg.synth, seed)?;
    write_corpus(out, &clips, &cfg.synth.label)?;
    Ok(clips.len())
}
