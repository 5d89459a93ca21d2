//! Glue between training, scoring and evaluation, shared by the CLI and the
//! end-to-end tests.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluator::{evaluate, expand_scores, EvalOptions, EvalReport, ScoreSeries};
use crate::features::{Manifest, ManifestEntry, Split};
use crate::model::ModelParams;
use crate::trainer::{load_bag, score_bag, EpochRecord, TrainConfig};

/// Frame-level scores for one manifest entry.
pub fn score_entry(
    manifest: &Manifest,
    entry: &ManifestEntry,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<ScoreSeries> {
    let bag = load_bag(&manifest.resolve(entry), entry, cfg)?;
    let snippet_scores = score_bag(params, &bag)?;
    let frame_scores = expand_scores(&snippet_scores, cfg.snippet_len, entry.frame_count)
        .map_err(|e| Error::Evaluation {
            video_id: entry.video_id.clone(),
            message: e.to_string(),
        })?;
    Ok(ScoreSeries {
        video_id: entry.video_id.clone(),
        frame_scores,
    })
}

pub fn score_split(
    manifest: &Manifest,
    split: Split,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Vec<ScoreSeries>> {
    manifest
        .split(split)
        .map(|e| score_entry(manifest, e, params, cfg))
        .collect()
}

/// Scores the test split and evaluates it.
pub fn evaluate_test_split(
    manifest: &Manifest,
    params: &ModelParams,
    cfg: &TrainConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let scores = score_split(manifest, Split::Test, params, cfg)?;
    let test: Vec<ManifestEntry> = manifest.split(Split::Test).cloned().collect();
    evaluate(&test, &scores, options)
}

/// One JSON object per line.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for rec in history {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
