//! Manifest assembly from anomalous/normal source pools, and synthetic
//! planted-anomaly datasets.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    encode_feature_file, validate_manifest, write_manifest, ClassTag, FeatureSequence,
    FrameInterval, ManifestEntry, Split, ValidationReport, VideoLabel,
};
use crate::matrix::Matrix;

/// An annotated anomalous clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalousSource {
    #[serde(default)]
    pub video_id: Option<String>,
    pub feature_path: String,
    pub frame_count: usize,
    pub class_tag: String,
    #[serde(default)]
    pub anomaly_intervals: Vec<FrameInterval>,
    /// Used by [`SplitRule::Explicit`]; absent means train.
    #[serde(default)]
    pub split: Option<Split>,
}

/// A clip known to contain no anomaly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalSource {
    #[serde(default)]
    pub video_id: Option<String>,
    pub feature_path: String,
    pub frame_count: usize,
    #[serde(default)]
    pub anomaly_intervals: Vec<FrameInterval>,
    #[serde(default)]
    pub split: Option<Split>,
}

/// How anomalous sources are assigned to splits. Normal sources always go to
/// train.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    /// Take each source's own `split` field.
    Explicit,
    /// Sort anomalous sources by id, shuffle with `seed`, and send the first
    /// `round(fraction * n)` to test.
    TestFraction { fraction: f64, seed: u64 },
}

fn default_id(id: &Option<String>, path: &str) -> String {
    id.clone().unwrap_or_else(|| {
        Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string())
    })
}

/// Builds a manifest whose training split mixes anomalous and normal videos
/// and whose test split holds only annotated anomalous videos. Feature paths
/// are resolved against `root` to check that they exist. The result always
/// passes [`validate_manifest`]; otherwise this returns an error.
pub fn build_manifest(
    anomalous: &[AnomalousSource],
    normal: &[NormalSource],
    rule: SplitRule,
    root: &Path,
) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut check_common = |id: &str, path: &str| -> Result<()> {
        if !seen.insert(id.to_string()) {
            return Err(Error::Dataset(format!("duplicate video_id {id:?}")));
        }
        let resolved = if Path::new(path).is_absolute() {
            PathBuf::from(path)
        } else {
            root.join(path)
        };
        if !resolved.is_file() {
            return Err(Error::Dataset(format!(
                "{id}: feature file {} does not exist",
                resolved.display()
            )));
        }
        Ok(())
    };

    let mut anomalies = Vec::with_capacity(anomalous.len());
    for src in anomalous {
        let id = default_id(&src.video_id, &src.feature_path);
        check_common(&id, &src.feature_path)?;
        let tag: ClassTag = src
            .class_tag
            .parse()
            .map_err(|_| Error::Dataset(format!("{id}: unknown class tag {:?}", src.class_tag)))?;
        anomalies.push((id, tag, src));
    }
    let mut entries = Vec::with_capacity(anomalous.len() + normal.len());
    for src in normal {
        let id = default_id(&src.video_id, &src.feature_path);
        check_common(&id, &src.feature_path)?;
        if !src.anomaly_intervals.is_empty() {
            return Err(Error::Dataset(format!("{id}: normal source lists anomaly intervals")));
        }
        if src.split == Some(Split::Test) {
            return Err(Error::Dataset(format!(
                "{id}: normal sources cannot be placed in the test split"
            )));
        }
        entries.push(ManifestEntry {
            video_id: id,
            split: Split::Train,
            label: VideoLabel::Normal,
            class_tag: None,
            feature_path: src.feature_path.clone(),
            frame_count: src.frame_count,
            anomaly_intervals: Vec::new(),
        });
    }

    let test_ids: HashSet<String> = match rule {
        SplitRule::Explicit => anomalies
            .iter()
            .filter(|(_, _, s)| s.split == Some(Split::Test))
            .map(|(id, _, _)| id.clone())
            .collect(),
        SplitRule::TestFraction { fraction, seed } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Argument(format!("test fraction {fraction} outside [0, 1]")));
            }
            let mut ids: Vec<String> = anomalies.iter().map(|(id, _, _)| id.clone()).collect();
            ids.sort();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_test = (fraction * ids.len() as f64).round() as usize;
            ids.into_iter().take(n_test).collect()
        }
    };

    for (id, tag, src) in anomalies {
        let split = if test_ids.contains(&id) {
            Split::Test
        } else {
            Split::Train
        };
        if split == Split::Test && src.anomaly_intervals.is_empty() {
            return Err(Error::Dataset(format!(
                "{id}: test sources need annotated anomaly intervals"
            )));
        }
        entries.push(ManifestEntry {
            video_id: id,
            split,
            label: VideoLabel::Anomaly,
            class_tag: Some(tag),
            feature_path: src.feature_path.clone(),
            frame_count: src.frame_count,
            anomaly_intervals: src.anomaly_intervals.clone(),
        });
    }

    let report = validate_manifest(&entries);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub frames: usize,
    pub dim: usize,
    pub anomaly_len: usize,
    pub magnitude_boost: f64,
    pub noise_sigma: f64,
    /// Per-video scene scale is drawn log-uniformly from this range. It
    /// scales the static appearance component only, not the frame-to-frame
    /// noise.
    pub scene_scale: (f64, f64),
    /// Rotation applied to anomalous frames, in radians.
    pub rotation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_normal: 40,
            n_anomaly: 40,
            frames: 256,
            dim: 32,
            anomaly_len: 32,
            magnitude_boost: 3.0,
            noise_sigma: 0.1,
            scene_scale: (0.5, 2.0),
            rotation: std::f64::consts::FRAC_PI_3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.frames < 2 || self.dim < 2 {
            return err("synthetic videos need at least 2 frames and 2 dims".into());
        }
        if self.anomaly_len < 1 || self.anomaly_len >= self.frames {
            return err(format!(
                "anomaly_len {} must be in [1, frames={})",
                self.anomaly_len, self.frames
            ));
        }
        if !(self.magnitude_boost > 1.0) {
            return err(format!("magnitude_boost {} must exceed 1", self.magnitude_boost));
        }
        if !(self.noise_sigma > 0.0) {
            return err(format!("noise_sigma {} must be positive", self.noise_sigma));
        }
        let (lo, hi) = self.scene_scale;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return err(format!("scene_scale ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }

    pub fn n_test_anomalies(&self) -> usize {
        (0.3 * self.n_anomaly as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Validation of the written manifest. Not empty when, for example,
    /// `n_anomaly == 0`.
    pub report: ValidationReport,
}

/// Drift of the slow embedding walk: AR(1) coefficient and step size.
const DRIFT_DECAY: f64 = 0.98;
const DRIFT_STEP: f64 = 0.01;
const ANOMALY_STREAM: u64 = 1 << 32;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rotation by `angle` in the plane spanned by orthonormal `u` and `w`.
fn rotate(x: &[f64], u: &[f64], w: &[f64], angle: f64) -> Vec<f64> {
    let a: f64 = x.iter().zip(u).map(|(p, q)| p * q).sum();
    let b: f64 = x.iter().zip(w).map(|(p, q)| p * q).sum();
    let (s, c) = angle.sin_cos();
    let (a2, b2) = (c * a - s * b, s * a + c * b);
    x.iter()
        .zip(u.iter().zip(w))
        .map(|(&xi, (&ui, &wi))| xi + (a2 - a) * ui + (b2 - b) * wi)
        .collect()
}

/// One synthetic video. `anomaly` is the planted interval, if any.
fn synth_video(cfg: &SynthConfig, stream: u64, anomaly: Option<FrameInterval>) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let d = cfg.dim;
    let base = unit_vector(&mut rng, d);
    let (lo, hi) = cfg.scene_scale;
    let scale = if hi > lo {
        (rng.random_range(lo.ln()..hi.ln())).exp()
    } else {
        lo
    };
    // A direction orthogonal to the base for the anomaly rotation.
    let mut ortho = unit_vector(&mut rng, d);
    let dot: f64 = ortho.iter().zip(&base).map(|(p, q)| p * q).sum();
    for (o, b) in ortho.iter_mut().zip(&base) {
        *o -= dot * b;
    }
    let n = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
    ortho.iter_mut().for_each(|x| *x /= n);

    let mut drift = vec![0.0; d];
    let mut out = Matrix::zeros(cfg.frames, d);
    for t in 0..cfg.frames {
        for v in drift.iter_mut() {
            *v = DRIFT_DECAY * *v + DRIFT_STEP * gaussian(&mut rng);
        }
        let frame: Vec<f64> = (0..d)
            .map(|i| scale * base[i] + drift[i] + cfg.noise_sigma * gaussian(&mut rng))
            .collect();
        let frame = match anomaly {
            Some(iv) if iv.contains(t) => rotate(&frame, &base, &ortho, cfg.rotation)
                .into_iter()
                .map(|x| x * cfg.magnitude_boost)
                .collect(),
            _ => frame,
        };
        out.row_mut(t).copy_from_slice(&frame);
    }
    out
}

/// Writes `features/<video_id>.ftbf` for every video plus `manifest.jsonl`
/// under `out_dir`.
///
/// Normal videos are a per-video random unit direction times a scene scale,
/// plus a slow AR(1) drift and i.i.d. Gaussian noise. Anomalous videos are
/// drawn the same way, except that one interval of `anomaly_len` frames is
/// rotated away from the base direction and scaled by `magnitude_boost`.
/// All normals and 70% of anomalies go to train; the rest are test.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let feat_dir = out_dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let mut entries = Vec::with_capacity(cfg.n_normal + cfg.n_anomaly);
    for i in 0..cfg.n_normal {
        let id = format!("normal_{i:04}");
        let seq = FeatureSequence::new(synth_video(cfg, i as u64, None))?;
        let rel = format!("features/{id}.ftbf");
        encode_feature_file(&seq, out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            video_id: id,
            split: Split::Train,
            label: VideoLabel::Normal,
            class_tag: None,
            feature_path: rel,
            frame_count: cfg.frames,
            anomaly_intervals: Vec::new(),
        });
    }
    let n_train = cfg.n_anomaly - cfg.n_test_anomalies();
    for i in 0..cfg.n_anomaly {
        let stream = ANOMALY_STREAM + i as u64;
        // The interval start comes from its own stream so it is independent of
        // the frame content.
        let mut placement = ChaCha8Rng::seed_from_u64(cfg.seed);
        placement.set_stream(stream | (1 << 40));
        let start = placement.random_range(0..=cfg.frames - cfg.anomaly_len);
        let interval = FrameInterval::new(start, start + cfg.anomaly_len);
        let id = format!("anomaly_{i:04}");
        let seq = FeatureSequence::new(synth_video(cfg, stream, Some(interval)))?;
        let rel = format!("features/{id}.ftbf");
        encode_feature_file(&seq, out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            video_id: id,
            split: if i < n_train { Split::Train } else { Split::Test },
            label: VideoLabel::Anomaly,
            class_tag: Some(ClassTag::ALL[i % ClassTag::ALL.len()]),
            feature_path: rel,
            frame_count: cfg.frames,
            anomaly_intervals: vec![interval],
        });
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &entries)?;
    let report = validate_manifest(&entries);
    Ok(SynthOutput {
        manifest_path,
        entries,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_preserves_norm_and_moves_base() {
        let u = [1.0, 0.0, 0.0];
        let w = [0.0, 1.0, 0.0];
        let r = rotate(&[2.0, 0.0, 5.0], &u, &w, std::f64::consts::FRAC_PI_2);
        assert!((r[0]).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12 && r[2] == 5.0);
    }

    #[test]
    fn synth_config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = [
            SynthConfig { anomaly_len: 256, ..SynthConfig::default() },
            SynthConfig { magnitude_boost: 1.0, ..SynthConfig::default() },
            SynthConfig { noise_sigma: 0.0, ..SynthConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn split_sizes() {
        assert_eq!(SynthConfig { n_anomaly: 40, ..SynthConfig::default() }.n_test_anomalies(), 12);
        assert_eq!(SynthConfig { n_anomaly: 10, ..SynthConfig::default() }.n_test_anomalies(), 3);
    }
}
