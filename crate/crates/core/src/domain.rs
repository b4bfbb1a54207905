//! Core entities shared by every stage of the pipeline.
//!
//! Everything here is immutable once constructed except [`AssignmentState`],
//! which the optimizer owns for the duration of a partition run.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on a speech segment's duration, in seconds.
pub const DEFAULT_MAX_SEGMENT_S: f64 = 1.0;

/// An identity embedding from a speaker- or face-recognition model.
///
/// Stored as given. The norm is cached because every cosine evaluation needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidEmbedding(format!(
                "dimension must be at least 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(Error::InvalidEmbedding("zero norm".into()));
        }
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

impl Serialize for Embedding {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Embedding::new(values).map_err(serde::de::Error::custom)
    }
}

/// A speaker-homogeneous interval of speech.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSegment {
    pub id: String,
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub embedding: Embedding,
}

impl SpeechSegment {
    pub fn new(
        id: impl Into<String>,
        video_id: impl Into<String>,
        start_s: f64,
        end_s: f64,
        embedding: Embedding,
    ) -> Result<Self> {
        let id = id.into();
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s >= end_s {
            return Err(Error::entity(
                "segment",
                id,
                format!("require 0 <= start_s < end_s, got ({start_s}, {end_s})"),
            ));
        }
        Ok(Self {
            id,
            video_id: video_id.into(),
            start_s,
            end_s,
            embedding,
        })
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A single face detection. Geometry is carried for output only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub box_id: String,
    #[serde(rename = "t_s")]
    pub timestamp_s: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl FaceBox {
    pub fn new(box_id: impl Into<String>, timestamp_s: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self {
            box_id: box_id.into(),
            timestamp_s,
            x1,
            y1,
            x2,
            y2,
        };
        b.check()?;
        Ok(b)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::entity("box", &self.box_id, "require x1 < x2 and y1 < y2"));
        }
        if !(self.timestamp_s >= 0.0 && self.timestamp_s.is_finite()) {
            return Err(Error::entity("box", &self.box_id, "timestamp must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A contiguous sequence of one person's face boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub id: String,
    pub video_id: String,
    boxes: Vec<FaceBox>,
    pub embedding: Embedding,
}

impl FaceTrack {
    pub fn new(
        id: impl Into<String>,
        video_id: impl Into<String>,
        boxes: Vec<FaceBox>,
        embedding: Embedding,
    ) -> Result<Self> {
        let id = id.into();
        if boxes.is_empty() {
            return Err(Error::entity("track", id, "no boxes"));
        }
        for b in &boxes {
            b.check()?;
        }
        if boxes.windows(2).any(|w| w[0].timestamp_s >= w[1].timestamp_s) {
            return Err(Error::entity("track", id, "box timestamps must be strictly increasing"));
        }
        Ok(Self {
            id,
            video_id: video_id.into(),
            boxes,
            embedding,
        })
    }

    pub fn boxes(&self) -> &[FaceBox] {
        &self.boxes
    }

    pub fn start_s(&self) -> f64 {
        self.boxes[0].timestamp_s
    }

    pub fn end_s(&self) -> f64 {
        self.boxes[self.boxes.len() - 1].timestamp_s
    }
}

/// Tracks temporally overlapping one speech segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub segment_id: String,
    pub track_ids: BTreeSet<String>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.track_ids.len()
    }
}

/// Current speaker choice per segment plus the segments pinned by positive guides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentState {
    pub assignment: BTreeMap<String, Option<String>>,
    pub pinned: BTreeSet<String>,
}

impl AssignmentState {
    pub fn track_of(&self, segment_id: &str) -> Option<&str> {
        self.assignment.get(segment_id).and_then(|t| t.as_deref())
    }

    pub fn is_pinned(&self, segment_id: &str) -> bool {
        self.pinned.contains(segment_id)
    }
}

/// Per-box activity posteriors from an external audio-visual model, keyed by track.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivityScores {
    pub per_track: BTreeMap<String, Vec<f64>>,
}

impl ActivityScores {
    pub fn get(&self, track_id: &str) -> Option<&[f64]> {
        self.per_track.get(track_id).map(Vec::as_slice)
    }

    /// Flattens to box-level scores using each track's box order.
    pub fn box_scores(&self, tracks: &[FaceTrack]) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for track in tracks {
            if let Some(scores) = self.per_track.get(&track.id) {
                for (b, s) in track.boxes().iter().zip(scores) {
                    out.insert(b.box_id.clone(), *s);
                }
            }
        }
        out
    }
}

/// Run parameters. Field names match the command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub context_length: usize,
    pub tau_p: f64,
    pub tau_n: f64,
    pub alpha: f64,
    pub max_segment_s: f64,
    pub min_overlap_s: f64,
    pub convergence_eps: f64,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            context_length: 500,
            tau_p: 0.9,
            tau_n: 0.2,
            alpha: 0.5,
            max_segment_s: DEFAULT_MAX_SEGMENT_S,
            min_overlap_s: 0.0,
            convergence_eps: 1e-9,
            max_sweeps: 50,
            restarts: 1,
            rng_seed: 0,
        }
    }
}

impl Config {
    /// Unguided defaults (L = 500).
    pub fn scmia() -> Self {
        Self::default()
    }

    /// Guided defaults (L = 50).
    pub fn gscmia() -> Self {
        Self {
            context_length: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.context_length < 2 {
            return bad(format!("context_length must be >= 2, got {}", self.context_length));
        }
        // The closed ends (tau_p = 1, tau_n = 0) switch a guide type off entirely.
        if !(self.tau_p > 0.0 && self.tau_p <= 1.0) {
            return bad(format!("tau_p must lie in (0, 1], got {}", self.tau_p));
        }
        if !(self.tau_n >= 0.0 && self.tau_n < 1.0) {
            return bad(format!("tau_n must lie in [0, 1), got {}", self.tau_n));
        }
        if self.tau_n >= self.tau_p {
            return bad(format!("tau_n ({}) must be below tau_p ({})", self.tau_n, self.tau_p));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.max_segment_s > 0.0) {
            return bad(format!("max_segment_s must be positive, got {}", self.max_segment_s));
        }
        if !(self.min_overlap_s >= 0.0) {
            return bad(format!("min_overlap_s must be >= 0, got {}", self.min_overlap_s));
        }
        if !(self.convergence_eps > 0.0) {
            return bad(format!("convergence_eps must be positive, got {}", self.convergence_eps));
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be positive".into());
        }
        Ok(())
    }
}

/// One problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateSegmentId(String),
    DuplicateTrackId(String),
    DuplicateBoxId(String),
    SegmentDimMismatch { id: String, expected: usize, found: usize },
    TrackDimMismatch { id: String, expected: usize, found: usize },
    SegmentTooLong { id: String, duration_s: f64, max_s: f64 },
    ScoreMisaligned { track_id: String, boxes: usize, scores: usize },
    ScoreOutOfRange { track_id: String, index: usize, value: f64 },
    ScoresForUnknownTrack(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateSegmentId(id) => write!(f, "duplicate segment id `{id}`"),
            Violation::DuplicateTrackId(id) => write!(f, "duplicate track id `{id}`"),
            Violation::DuplicateBoxId(id) => write!(f, "duplicate box id `{id}`"),
            Violation::SegmentDimMismatch { id, expected, found } => {
                write!(f, "segment `{id}` embedding has dim {found}, expected {expected}")
            }
            Violation::TrackDimMismatch { id, expected, found } => {
                write!(f, "track `{id}` embedding has dim {found}, expected {expected}")
            }
            Violation::SegmentTooLong { id, duration_s, max_s } => {
                write!(f, "segment `{id}` lasts {duration_s}s, cap is {max_s}s")
            }
            Violation::ScoreMisaligned { track_id, boxes, scores } => {
                write!(f, "track `{track_id}` has {boxes} boxes but {scores} scores")
            }
            Violation::ScoreOutOfRange { track_id, index, value } => {
                write!(f, "track `{track_id}` score #{index} = {value} outside [0, 1]")
            }
            Violation::ScoresForUnknownTrack(id) => write!(f, "scores given for unknown track `{id}`"),
        }
    }
}

/// Checks cross-record consistency using the default segment cap.
pub fn validate_dataset(
    segments: &[SpeechSegment],
    tracks: &[FaceTrack],
    scores: Option<&ActivityScores>,
) -> Vec<Violation> {
    validate_dataset_with(segments, tracks, scores, DEFAULT_MAX_SEGMENT_S)
}

pub fn validate_dataset_with(
    segments: &[SpeechSegment],
    tracks: &[FaceTrack],
    scores: Option<&ActivityScores>,
    max_segment_s: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut seen = HashSet::new();
    let seg_dim = segments.first().map(|s| s.embedding.dim());
    for s in segments {
        if !seen.insert(s.id.as_str()) {
            out.push(Violation::DuplicateSegmentId(s.id.clone()));
        }
        if let Some(expected) = seg_dim.filter(|&d| d != s.embedding.dim()) {
            out.push(Violation::SegmentDimMismatch {
                id: s.id.clone(),
                expected,
                found: s.embedding.dim(),
            });
        }
        if s.duration() > max_segment_s + 1e-9 {
            out.push(Violation::SegmentTooLong {
                id: s.id.clone(),
                duration_s: s.duration(),
                max_s: max_segment_s,
            });
        }
    }

    let mut seen_tracks = HashSet::new();
    let mut seen_boxes = HashSet::new();
    let track_dim = tracks.first().map(|t| t.embedding.dim());
    let mut box_counts: HashMap<&str, usize> = HashMap::new();
    for t in tracks {
        if !seen_tracks.insert(t.id.as_str()) {
            out.push(Violation::DuplicateTrackId(t.id.clone()));
        }
        if let Some(expected) = track_dim.filter(|&d| d != t.embedding.dim()) {
            out.push(Violation::TrackDimMismatch {
                id: t.id.clone(),
                expected,
                found: t.embedding.dim(),
            });
        }
        for b in t.boxes() {
            if !seen_boxes.insert(b.box_id.as_str()) {
                out.push(Violation::DuplicateBoxId(b.box_id.clone()));
            }
        }
        box_counts.insert(t.id.as_str(), t.boxes().len());
    }

    if let Some(scores) = scores {
        for (track_id, values) in &scores.per_track {
            match box_counts.get(track_id.as_str()) {
                None => out.push(Violation::ScoresForUnknownTrack(track_id.clone())),
                Some(&n) if n != values.len() => out.push(Violation::ScoreMisaligned {
                    track_id: track_id.clone(),
                    boxes: n,
                    scores: values.len(),
                }),
                Some(_) => {}
            }
            for (index, &value) in values.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    out.push(Violation::ScoreOutOfRange {
                        track_id: track_id.clone(),
                        index,
                        value,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn seg(id: &str, start: f64, end: f64) -> SpeechSegment {
        SpeechSegment::new(id, "v", start, end, emb(&[1.0, 0.0])).unwrap()
    }

    fn track(id: &str, times: &[f64]) -> FaceTrack {
        let boxes = times
            .iter()
            .enumerate()
            .map(|(i, &t)| FaceBox::new(format!("{id}_b{i}"), t, 0.0, 0.0, 10.0, 10.0).unwrap())
            .collect();
        FaceTrack::new(id, "v", boxes, emb(&[0.0, 1.0])).unwrap()
    }

    #[test]
    fn embedding_rejects_degenerate_input() {
        assert!(Embedding::new(vec![1.0]).is_err());
        assert!(Embedding::new(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![f64::NAN, 1.0]).is_err());
        assert_eq!(emb(&[3.0, 4.0]).norm(), 5.0);
    }

    #[test]
    fn entity_invariants() {
        assert!(SpeechSegment::new("s", "v", 1.0, 1.0, emb(&[1.0, 0.0])).is_err());
        assert!(SpeechSegment::new("s", "v", -0.1, 0.5, emb(&[1.0, 0.0])).is_err());
        assert!(FaceBox::new("b", 0.0, 5.0, 0.0, 5.0, 1.0).is_err());
        assert!(FaceTrack::new("t", "v", vec![], emb(&[1.0, 0.0])).is_err());
        let b = FaceBox::new("b", 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(FaceTrack::new("t", "v", vec![b.clone(), b], emb(&[1.0, 0.0])).is_err());
        let t = track("t", &[0.5, 0.6, 2.0]);
        assert_eq!((t.start_s(), t.end_s()), (0.5, 2.0));
    }

    #[test]
    fn duplicate_segment_ids_are_reported() {
        let report = validate_dataset(&[seg("s1", 0.0, 1.0), seg("s1", 1.0, 2.0)], &[], None);
        assert_eq!(report, vec![Violation::DuplicateSegmentId("s1".into())]);
    }

    #[test]
    fn misaligned_scores_are_reported() {
        let tracks = [track("f1", &[0.0, 0.1, 0.2])];
        let mut scores = ActivityScores::default();
        scores.per_track.insert("f1".into(), vec![0.5, 0.5]);
        let report = validate_dataset(&[], &tracks, Some(&scores));
        assert_eq!(
            report,
            vec![Violation::ScoreMisaligned {
                track_id: "f1".into(),
                boxes: 3,
                scores: 2
            }]
        );
    }

    #[test]
    fn well_formed_dataset_is_clean() {
        let tracks = [track("f1", &[0.0, 0.1]), track("f2", &[0.0, 0.5])];
        let mut scores = ActivityScores::default();
        scores.per_track.insert("f1".into(), vec![0.1, 0.9]);
        scores.per_track.insert("f2".into(), vec![0.0, 1.0]);
        let report = validate_dataset(&[seg("s1", 0.0, 1.0), seg("s2", 1.0, 1.5)], &tracks, Some(&scores));
        assert!(report.is_empty(), "{report:?}");
    }

    #[test]
    fn dimension_and_duration_violations() {
        let odd = SpeechSegment::new("s2", "v", 0.0, 1.5, emb(&[1.0, 0.0, 0.0])).unwrap();
        let report = validate_dataset(&[seg("s1", 0.0, 1.0), odd], &[], None);
        assert_eq!(report.len(), 2);
        assert!(matches!(report[0], Violation::SegmentDimMismatch { expected: 2, found: 3, .. }));
        assert!(matches!(report[1], Violation::SegmentTooLong { .. }));
    }

    #[test]
    fn config_validation() {
        Config::scmia().validate().unwrap();
        assert_eq!(Config::gscmia().context_length, 50);
        let bad = Config {
            tau_n: 0.9,
            tau_p: 0.9,
            ..Config::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = Config {
            context_length: 1,
            ..Config::default()
        };
        assert!(bad.validate().is_err());
    }
}
