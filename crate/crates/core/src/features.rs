//! Feature files, snippet pooling and the video manifest.
//!
//! A `.ftbf` file is a 16-byte header followed by a row-major `f32` payload:
//!
//! | bytes  | content                          |
//! |--------|----------------------------------|
//! | 0..4   | ASCII `FTBF`                     |
//! | 4..8   | version, `u32` LE, currently `1` |
//! | 8..12  | `T` (rows), `u32` LE             |
//! | 12..16 | `D` (cols), `u32` LE             |
//! | 16..   | `T * D` `f32` LE, row-major      |
//!
//! The manifest is JSON lines, one [`ManifestEntry`] per line.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DecodeError, Error, Result};
use crate::matrix::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"FTBF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 16;

/// A `T x D` sequence of per-frame (or per-snippet) embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Matrix,
    frame_rate_hint: Option<f64>,
}

impl FeatureSequence {
    /// Rejects empty shapes and non-finite elements.
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::InvalidSequence(format!(
                "shape {}x{} is empty",
                data.rows(),
                data.cols()
            )));
        }
        if let Some(i) = data.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSequence(format!(
                "non-finite value at element {i}"
            )));
        }
        Ok(Self {
            data,
            frame_rate_hint: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn with_frame_rate_hint(mut self, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Argument(format!("frame rate hint {fps} must be positive")));
        }
        self.frame_rate_hint = Some(fps);
        Ok(self)
    }

    pub fn frame_rate_hint(&self) -> Option<f64> {
        self.frame_rate_hint
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

/// Parses the bytes of a `.ftbf` file.
pub fn decode_feature_bytes(bytes: &[u8]) -> Result<FeatureSequence, DecodeError> {
    if bytes.len() < FEATURE_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != FEATURE_MAGIC {
            return Err(DecodeError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(DecodeError::TruncatedHeader(bytes.len()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != FEATURE_MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let (rows, cols) = (word(8), word(12));
    if rows == 0 || cols == 0 {
        return Err(DecodeError::EmptyShape { rows, cols });
    }
    let expected = rows as usize * cols as usize * 4;
    let actual = bytes.len() - FEATURE_HEADER_LEN;
    if actual < expected {
        return Err(DecodeError::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(DecodeError::TrailingBytes { expected, actual });
    }
    let mut data = Vec::with_capacity(rows as usize * cols as usize);
    for (i, chunk) in bytes[FEATURE_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DecodeError::NonFinite(i));
        }
        data.push(v as f64);
    }
    Ok(FeatureSequence {
        data: Matrix::from_vec(rows as usize, cols as usize, data),
        frame_rate_hint: None,
    })
}

/// Serializes a sequence; values are rounded to `f32`.
pub fn encode_feature_bytes(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let (rows, cols) = seq.data.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidSequence(format!("shape {rows}x{cols} is empty")));
    }
    let (r32, c32) = match (u32::try_from(rows), u32::try_from(cols)) {
        (Ok(r), Ok(c)) => (r, c),
        _ => return Err(Error::InvalidSequence(format!("shape {rows}x{cols} exceeds u32"))),
    };
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + rows * cols * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&r32.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());
    for (i, &v) in seq.data.as_slice().iter().enumerate() {
        let v = v as f32;
        if !v.is_finite() {
            return Err(Error::InvalidSequence(format!(
                "element {i} is not representable as a finite f32"
            )));
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_bytes(&bytes).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_bytes(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Mean-pools consecutive windows of `snippet_len` frames.
///
/// Produces `ceil(T / snippet_len)` rows. A trailing partial window is padded
/// to full length by repeating the last frame before averaging.
pub fn snippetize(seq: &FeatureSequence, snippet_len: usize) -> Result<FeatureSequence> {
    if snippet_len < 1 {
        return Err(Error::Argument("snippet length must be at least 1".into()));
    }
    let frames = seq.matrix();
    let (t, d) = frames.shape();
    if snippet_len == 1 {
        return Ok(seq.clone());
    }
    let n = t.div_ceil(snippet_len);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let start = i * snippet_len;
        let acc = out.row_mut(i);
        for f in start..start + snippet_len {
            let row = frames.row(f.min(t - 1));
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        for a in acc.iter_mut() {
            *a /= snippet_len as f64;
        }
    }
    Ok(FeatureSequence {
        data: out,
        frame_rate_hint: seq.frame_rate_hint.map(|fps| fps / snippet_len as f64),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoLabel {
    Normal,
    Anomaly,
}

/// Accident categories of the driving-anomaly taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassTag {
    /// Collision with another vehicle which starts, stops, or is stationary.
    ST,
    /// Collision with another vehicle moving ahead or waiting.
    AH,
    /// Collision with another vehicle moving laterally in the same direction.
    LA,
    /// Collision with another oncoming vehicle.
    OC,
    /// Collision with another vehicle which turns into or crosses a road.
    TC,
    /// Collision between vehicle and pedestrian.
    VP,
    /// Collision with an obstacle in the roadway.
    VO,
    /// Out-of-control and leaving the roadway to the left or right.
    OO,
}

impl ClassTag {
    pub const ALL: [ClassTag; 8] = [
        ClassTag::ST,
        ClassTag::AH,
        ClassTag::LA,
        ClassTag::OC,
        ClassTag::TC,
        ClassTag::VP,
        ClassTag::VO,
        ClassTag::OO,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassTag::ST => "ST",
            ClassTag::AH => "AH",
            ClassTag::LA => "LA",
            ClassTag::OC => "OC",
            ClassTag::TC => "TC",
            ClassTag::VP => "VP",
            ClassTag::VO => "VO",
            ClassTag::OO => "OO",
        }
    }
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassTag::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown class tag {s:?}")))
    }
}

/// Half-open frame range `[start, end)`, serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct FrameInterval {
    pub start: usize,
    pub end: usize,
}

impl FrameInterval {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame < self.end
    }
}

impl From<[usize; 2]> for FrameInterval {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<FrameInterval> for [usize; 2] {
    fn from(iv: FrameInterval) -> Self {
        [iv.start, iv.end]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    pub label: VideoLabel,
    pub class_tag: Option<ClassTag>,
    pub feature_path: String,
    pub frame_count: usize,
    #[serde(default)]
    pub anomaly_intervals: Vec<FrameInterval>,
}

impl ManifestEntry {
    /// Per-frame ground truth: `true` inside any anomaly interval.
    pub fn frame_labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.frame_count];
        for iv in &self.anomaly_intervals {
            for l in labels.iter_mut().take(iv.end).skip(iv.start) {
                *l = true;
            }
        }
        labels
    }
}

/// Manifest entries plus the directory relative feature paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries = read_manifest(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, root })
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.feature_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    NoNormalTraining,
    NoAnomalyTraining,
    DuplicateVideoId,
    ZeroFrameCount,
    EmptyInterval(FrameInterval),
    IntervalOutOfRange(FrameInterval),
    IntervalsUnsortedOrOverlapping,
    MissingClassTag,
    UnexpectedClassTag,
    NormalWithIntervals,
    TestAnomalyWithoutIntervals,
    FeatureUnreadable(String),
    FrameCountMismatch { manifest: usize, file: usize },
}

/// One problem found in a manifest. `video_id` is absent for split-level
/// problems.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub video_id: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.video_id {
            write!(f, "{id}: ")?;
        }
        match &self.kind {
            ViolationKind::NoNormalTraining => {
                f.write_str("weak-supervision precondition: no normal training videos")
            }
            ViolationKind::NoAnomalyTraining => {
                f.write_str("weak-supervision precondition: no anomalous training videos")
            }
            ViolationKind::DuplicateVideoId => f.write_str("duplicate video_id"),
            ViolationKind::ZeroFrameCount => f.write_str("frame_count must be positive"),
            ViolationKind::EmptyInterval(iv) => {
                write!(f, "empty anomaly interval [{}, {})", iv.start, iv.end)
            }
            ViolationKind::IntervalOutOfRange(iv) => {
                write!(f, "anomaly interval [{}, {}) exceeds frame_count", iv.start, iv.end)
            }
            ViolationKind::IntervalsUnsortedOrOverlapping => {
                f.write_str("anomaly intervals are not sorted and disjoint")
            }
            ViolationKind::MissingClassTag => f.write_str("test anomaly entry has no class_tag"),
            ViolationKind::UnexpectedClassTag => {
                f.write_str("test normal entry carries a class_tag")
            }
            ViolationKind::NormalWithIntervals => {
                f.write_str("normal entry lists anomaly intervals")
            }
            ViolationKind::TestAnomalyWithoutIntervals => {
                f.write_str("test anomaly entry has no anomaly intervals")
            }
            ViolationKind::FeatureUnreadable(msg) => write!(f, "feature file unreadable: {msg}"),
            ViolationKind::FrameCountMismatch { manifest, file } => {
                write!(f, "frame_count {manifest} but the feature file has {file} frames")
            }
        }
    }
}

/// Sorted, deduplicated list of violations. Empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, kind: &ViolationKind) -> bool {
        self.violations.iter().any(|v| &v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn entry_violations(e: &ManifestEntry, out: &mut Vec<Violation>) {
    let mut push = |kind| {
        out.push(Violation {
            video_id: Some(e.video_id.clone()),
            kind,
        })
    };
    if e.frame_count == 0 {
        push(ViolationKind::ZeroFrameCount);
    }
    for iv in &e.anomaly_intervals {
        if iv.is_empty() {
            push(ViolationKind::EmptyInterval(*iv));
        } else if iv.end > e.frame_count {
            push(ViolationKind::IntervalOutOfRange(*iv));
        }
    }
    if e
        .anomaly_intervals
        .windows(2)
        .any(|w| w[1].start < w[0].end)
    {
        push(ViolationKind::IntervalsUnsortedOrOverlapping);
    }
    if e.label == VideoLabel::Normal && !e.anomaly_intervals.is_empty() {
        push(ViolationKind::NormalWithIntervals);
    }
    if e.split == Split::Test {
        match (e.label, e.class_tag.is_some()) {
            (VideoLabel::Anomaly, false) => push(ViolationKind::MissingClassTag),
            (VideoLabel::Normal, true) => push(ViolationKind::UnexpectedClassTag),
            _ => {}
        }
        if e.label == VideoLabel::Anomaly && e.anomaly_intervals.is_empty() {
            push(ViolationKind::TestAnomalyWithoutIntervals);
        }
    }
}

fn validate_entries(entries: &[ManifestEntry], deep: Option<&Manifest>) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for e in entries {
        *seen.entry(e.video_id.as_str()).or_default() += 1;
        entry_violations(e, &mut violations);
        if let Some(m) = deep {
            let kind = match decode_feature_file(m.resolve(e)) {
                Err(err) => Some(ViolationKind::FeatureUnreadable(err.to_string())),
                Ok(seq) if seq.len() != e.frame_count => Some(ViolationKind::FrameCountMismatch {
                    manifest: e.frame_count,
                    file: seq.len(),
                }),
                Ok(_) => None,
            };
            if let Some(kind) = kind {
                violations.push(Violation {
                    video_id: Some(e.video_id.clone()),
                    kind,
                });
            }
        }
    }
    for (id, n) in seen {
        if n > 1 {
            violations.push(Violation {
                video_id: Some(id.to_string()),
                kind: ViolationKind::DuplicateVideoId,
            });
        }
    }
    let train_labels: BTreeSet<VideoLabel> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.label)
        .collect();
    if !train_labels.contains(&VideoLabel::Normal) {
        violations.push(Violation {
            video_id: None,
            kind: ViolationKind::NoNormalTraining,
        });
    }
    if !train_labels.contains(&VideoLabel::Anomaly) {
        violations.push(Violation {
            video_id: None,
            kind: ViolationKind::NoAnomalyTraining,
        });
    }
    violations.sort();
    violations.dedup();
    ValidationReport { violations }
}

/// Checks per-entry invariants, id uniqueness and the weak-supervision
/// precondition (training split holds both normal and anomalous videos).
pub fn validate_manifest(entries: &[ManifestEntry]) -> ValidationReport {
    validate_entries(entries, None)
}

/// Like [`validate_manifest`], and additionally decodes every feature file.
pub fn validate_manifest_deep(manifest: &Manifest) -> ValidationReport {
    validate_entries(&manifest.entries, Some(manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(rows: u32, cols: u32) -> Vec<u8> {
        let mut b = FEATURE_MAGIC.to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&cols.to_le_bytes());
        b
    }

    fn entry(id: &str, split: Split, label: VideoLabel) -> ManifestEntry {
        let anomalous = label == VideoLabel::Anomaly;
        ManifestEntry {
            video_id: id.into(),
            split,
            label,
            class_tag: anomalous.then_some(ClassTag::TC),
            feature_path: format!("{id}.ftbf"),
            frame_count: 100,
            anomaly_intervals: if anomalous && split == Split::Test {
                vec![FrameInterval::new(10, 20)]
            } else {
                vec![]
            },
        }
    }

    fn good_manifest() -> Vec<ManifestEntry> {
        vec![
            entry("n0", Split::Train, VideoLabel::Normal),
            entry("n1", Split::Train, VideoLabel::Normal),
            entry("a0", Split::Train, VideoLabel::Anomaly),
            entry("a1", Split::Train, VideoLabel::Anomaly),
            entry("t0", Split::Test, VideoLabel::Anomaly),
        ]
    }

    #[test]
    fn decodes_minimal_file() {
        let mut b = header(1, 2);
        b.extend_from_slice(&0.0f32.to_le_bytes());
        b.extend_from_slice(&1.0f32.to_le_bytes());
        let seq = decode_feature_bytes(&b).unwrap();
        assert_eq!(seq.matrix(), &Matrix::from_rows(&[[0.0, 1.0]]));
    }

    #[test]
    fn truncated_payload() {
        let mut b = header(2, 2);
        for v in [1.0f32, 2.0, 3.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(
            decode_feature_bytes(&b),
            Err(DecodeError::TruncatedPayload {
                expected: 16,
                actual: 12
            })
        );
    }

    #[test]
    fn decode_errors_are_distinct() {
        let mut bad_magic = header(1, 1);
        bad_magic[0] = b'X';
        bad_magic.extend_from_slice(&[0; 4]);
        assert!(matches!(
            decode_feature_bytes(&bad_magic),
            Err(DecodeError::BadMagic(_))
        ));

        let mut bad_version = header(1, 1);
        bad_version[4] = 2;
        bad_version.extend_from_slice(&[0; 4]);
        assert_eq!(
            decode_feature_bytes(&bad_version),
            Err(DecodeError::UnsupportedVersion(2))
        );

        let mut nan = header(1, 1);
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_feature_bytes(&nan), Err(DecodeError::NonFinite(0)));

        let mut long = header(1, 1);
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(
            decode_feature_bytes(&long),
            Err(DecodeError::TrailingBytes { .. })
        ));

        assert_eq!(
            decode_feature_bytes(b"FTBF"),
            Err(DecodeError::TruncatedHeader(4))
        );
    }

    #[test]
    fn encoded_size() {
        let seq = FeatureSequence::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(encode_feature_bytes(&seq).unwrap().len(), 24);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(
            FeatureSequence::new(Matrix::zeros(0, 4)),
            Err(Error::InvalidSequence(_))
        ));
        assert!(FeatureSequence::new(Matrix::zeros(3, 0)).is_err());
        assert!(FeatureSequence::from_rows(&[[f64::INFINITY]]).is_err());
    }

    #[test]
    fn encode_rejects_f32_overflow() {
        let seq = FeatureSequence::from_rows(&[[1e300]]).unwrap();
        assert!(encode_feature_bytes(&seq).is_err());
    }

    #[test]
    fn snippetize_pads_last_window() {
        let seq = FeatureSequence::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let out = snippetize(&seq, 2).unwrap();
        assert_eq!(out.matrix().column(0), vec![1.5, 3.5, 5.0]);
    }

    #[test]
    fn snippetize_identity_and_errors() {
        let seq = FeatureSequence::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        assert_eq!(snippetize(&seq, 1).unwrap(), seq);
        assert!(matches!(snippetize(&seq, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn snippet_longer_than_sequence_pads() {
        let seq = FeatureSequence::from_rows(&[[1.0], [3.0]]).unwrap();
        let out = snippetize(&seq, 4).unwrap();
        assert_eq!(out.matrix().column(0), vec![2.5]);
    }

    #[test]
    fn manifest_json_shape() {
        let e = entry("t0", Split::Test, VideoLabel::Anomaly);
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(
            json,
            r#"{"video_id":"t0","split":"test","label":"anomaly","class_tag":"TC","feature_path":"t0.ftbf","frame_count":100,"anomaly_intervals":[[10,20]]}"#
        );
        let back: ManifestEntry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<ManifestEntry>(&json.replace("TC", "XX")).is_err());
    }

    #[test]
    fn well_formed_manifest_is_valid() {
        assert!(validate_manifest(&good_manifest()).is_valid());
    }

    #[test]
    fn anomaly_only_training_violates_precondition() {
        let entries: Vec<_> = good_manifest()
            .into_iter()
            .filter(|e| e.label == VideoLabel::Anomaly)
            .collect();
        let report = validate_manifest(&entries);
        assert_eq!(report.len(), 1);
        assert_eq!(
            report.violations[0].to_string(),
            "weak-supervision precondition: no normal training videos"
        );
    }

    #[test]
    fn test_anomaly_needs_intervals() {
        let mut entries = good_manifest();
        entries[4].anomaly_intervals.clear();
        let report = validate_manifest(&entries);
        assert!(report.contains(&ViolationKind::TestAnomalyWithoutIntervals));
    }

    #[test]
    fn interval_and_tag_invariants() {
        let mut entries = good_manifest();
        entries[4].anomaly_intervals = vec![FrameInterval::new(30, 40), FrameInterval::new(35, 50)];
        entries[4].class_tag = None;
        entries.push(ManifestEntry {
            anomaly_intervals: vec![FrameInterval::new(90, 101)],
            ..entry("t1", Split::Test, VideoLabel::Anomaly)
        });
        entries.push(ManifestEntry {
            anomaly_intervals: vec![FrameInterval::new(5, 5)],
            ..entry("n2", Split::Train, VideoLabel::Normal)
        });
        entries.push(ManifestEntry {
            frame_count: 0,
            ..entry("n0", Split::Train, VideoLabel::Normal)
        });
        let report = validate_manifest(&entries);
        for kind in [
            ViolationKind::IntervalsUnsortedOrOverlapping,
            ViolationKind::MissingClassTag,
            ViolationKind::IntervalOutOfRange(FrameInterval::new(90, 101)),
            ViolationKind::EmptyInterval(FrameInterval::new(5, 5)),
            ViolationKind::NormalWithIntervals,
            ViolationKind::DuplicateVideoId,
            ViolationKind::ZeroFrameCount,
        ] {
            assert!(report.contains(&kind), "missing {kind:?} in {report}");
        }
    }

    #[test]
    fn frame_labels_from_intervals() {
        let e = ManifestEntry {
            frame_count: 6,
            anomaly_intervals: vec![FrameInterval::new(1, 3), FrameInterval::new(5, 6)],
            ..entry("t", Split::Test, VideoLabel::Anomaly)
        };
        assert_eq!(e.frame_labels(), vec![false, true, true, false, false, true]);
    }
}
