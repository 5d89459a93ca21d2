//! Frame-level ROC-AUC evaluation.
//!
//! Snippet scores are broadcast to frames, frame labels come from the
//! manifest's anomaly intervals, and AUC is micro-averaged over all test frames
//! (plus one AUC per anomaly class).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClassTag, ManifestEntry};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub frame_scores: Vec<f64>,
}

/// Broadcasts snippet scores to frames: frame `f` takes snippet `f / snippet_len`.
pub fn expand_scores(snippet_scores: &[f64], snippet_len: usize, frame_count: usize) -> Result<Vec<f64>> {
    if snippet_len < 1 || frame_count < 1 {
        return Err(Error::Argument(
            "snippet_len and frame_count must be positive".into(),
        ));
    }
    let expected = frame_count.div_ceil(snippet_len);
    if snippet_scores.len() != expected {
        return Err(Error::Shape(format!(
            "{} snippet scores for {frame_count} frames at snippet length {snippet_len} (expected {expected})",
            snippet_scores.len()
        )));
    }
    Ok((0..frame_count)
        .map(|f| snippet_scores[f / snippet_len])
        .collect())
}

/// Area under the ROC curve via midrank statistics. Equal to the fraction of
/// (positive, negative) pairs where the positive scores higher, ties counting
/// one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Argument(format!("score {i} is NaN")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are doubled so midranks stay integral.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share the midrank (i + 1 + j) / 2.
        let midrank2 = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        pos_rank_sum2 += midrank2 * tied_pos;
        i = j;
    }
    let p = positives as u128;
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / 2.0 / (positives as f64 * negatives as f64))
}

/// How negatives are chosen for a class-wise AUC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassNegatives {
    /// Only frames of videos carrying the class tag.
    #[default]
    WithinClass,
    /// Every test frame; positives remain the class's anomalous frames.
    AllVideos,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub class_negatives: ClassNegatives,
    /// Also report the unweighted mean of per-video AUCs.
    pub per_video_macro: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_auc: f64,
    pub class_auc: BTreeMap<ClassTag, f64>,
    /// Frame counts keyed by class tag, plus `"total"`.
    pub frames_evaluated: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_auc: Option<f64>,
}

fn auc_if_defined(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    match roc_auc(scores, labels) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Evaluates frame scores for the given (test) entries. Every entry needs a
/// [`ScoreSeries`] of matching length; classes whose frames lack either
/// positives or negatives are left out of `class_auc`.
pub fn evaluate(entries: &[ManifestEntry], scores: &[ScoreSeries], options: &EvalOptions) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &ScoreSeries> =
        scores.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut all_tags = Vec::new();
    let mut per_video = Vec::new();
    for e in entries {
        let series = by_id.get(e.video_id.as_str()).ok_or_else(|| Error::Evaluation {
            video_id: e.video_id.clone(),
            message: "no score series".into(),
        })?;
        if series.frame_scores.len() != e.frame_count {
            return Err(Error::Evaluation {
                video_id: e.video_id.clone(),
                message: format!(
                    "{} frame scores for frame_count {}",
                    series.frame_scores.len(),
                    e.frame_count
                ),
            });
        }
        if let Some(bad) = series
            .frame_scores
            .iter()
            .find(|s| !(s.is_finite() && (0.0..=1.0).contains(*s)))
        {
            return Err(Error::Evaluation {
                video_id: e.video_id.clone(),
                message: format!("score {bad} outside [0, 1]"),
            });
        }
        let labels = e.frame_labels();
        if options.per_video_macro {
            if let Some(auc) = auc_if_defined(&series.frame_scores, &labels)? {
                per_video.push(auc);
            }
        }
        all_scores.extend_from_slice(&series.frame_scores);
        all_labels.extend(labels);
        all_tags.extend(std::iter::repeat_n(e.class_tag, e.frame_count));
    }

    let overall_auc = roc_auc(&all_scores, &all_labels)?;
    let mut frames_evaluated = BTreeMap::from([("total".to_string(), all_scores.len())]);
    let mut class_auc = BTreeMap::new();
    for tag in ClassTag::ALL {
        let in_class: Vec<bool> = all_tags.iter().map(|t| *t == Some(tag)).collect();
        let n_class = in_class.iter().filter(|&&b| b).count();
        if n_class == 0 {
            continue;
        }
        let (s, l): (Vec<f64>, Vec<bool>) = match options.class_negatives {
            ClassNegatives::WithinClass => all_scores
                .iter()
                .zip(&all_labels)
                .zip(&in_class)
                .filter(|(_, &c)| c)
                .map(|((&s, &l), _)| (s, l))
                .unzip(),
            ClassNegatives::AllVideos => all_scores
                .iter()
                .zip(&all_labels)
                .zip(&in_class)
                .filter(|((_, &l), &c)| c || !l)
                .map(|((&s, &l), &c)| (s, l && c))
                .unzip(),
        };
        frames_evaluated.insert(tag.to_string(), n_class);
        if let Some(auc) = auc_if_defined(&s, &l)? {
            class_auc.insert(tag, auc);
        }
    }
    let macro_auc = (options.per_video_macro && !per_video.is_empty())
        .then(|| per_video.iter().sum::<f64>() / per_video.len() as f64);
    Ok(EvalReport {
        overall_auc,
        class_auc,
        frames_evaluated,
        macro_auc,
    })
}

/// `frame_index,score` lines under a header.
pub fn write_score_csv(path: impl AsRef<Path>, series: &ScoreSeries) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["frame_index", "score"])
        .map_err(|e| csv_error(path, e))?;
    for (i, s) in series.frame_scores.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_score_csv(path: impl AsRef<Path>, video_id: &str) -> Result<ScoreSeries> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut frame_scores = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |m: &str| Error::Evaluation {
            video_id: video_id.to_string(),
            message: format!("{}: row {}: {m}", path.display(), i + 1),
        };
        let idx: usize = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad frame_index"))?;
        if idx != i {
            return Err(bad("frame indices must be consecutive from 0"));
        }
        let score: f64 = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad score"))?;
        frame_scores.push(score);
    }
    Ok(ScoreSeries {
        video_id: video_id.to_string(),
        frame_scores,
    })
}

/// `frame_index,score,ground_truth_label` lines for external plotting.
pub fn write_heatmap_csv(path: impl AsRef<Path>, series: &ScoreSeries, entry: &ManifestEntry) -> Result<()> {
    let path = path.as_ref();
    let labels = entry.frame_labels();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["frame_index", "score", "ground_truth_label"])
        .map_err(|e| csv_error(path, e))?;
    for (i, (s, l)) in series.frame_scores.iter().zip(&labels).enumerate() {
        w.write_record([i.to_string(), s.to_string(), u8::from(*l).to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&json).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Evaluation {
            video_id: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}
