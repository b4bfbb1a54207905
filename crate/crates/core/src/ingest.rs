//! File formats and preprocessing.
//!
//! All record files are newline-delimited JSON, one object per line. Blank
//! lines are ignored. Parse failures report the file, the 1-based line number
//! and the offending field.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{ActivityScores, AssignmentState, CandidateSet, Embedding, FaceBox, FaceTrack, SpeechSegment};
use crate::error::{Error, Result};

/// Tolerance used when comparing chunk lengths against the cap.
const SPLIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoicedRegion {
    pub start_s: f64,
    pub end_s: f64,
}

impl VoicedRegion {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s < end_s) {
            return Err(Error::entity("voiced region", format!("{start_s}"), "require start_s < end_s"));
        }
        Ok(Self { start_s, end_s })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotBoundaryList {
    pub video_id: String,
    boundaries_s: Vec<f64>,
}

impl ShotBoundaryList {
    pub fn new(video_id: impl Into<String>, boundaries_s: Vec<f64>) -> Result<Self> {
        let video_id = video_id.into();
        if boundaries_s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::entity("shot list", video_id, "boundaries must be strictly increasing"));
        }
        Ok(Self { video_id, boundaries_s })
    }

    pub fn empty(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            boundaries_s: Vec::new(),
        }
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries_s
    }
}

/// Cuts voiced regions at shot boundaries, then greedily into chunks of at
/// most `max_segment_s`, left to right.
pub fn split_segments(
    regions: &[VoicedRegion],
    shots: &ShotBoundaryList,
    max_segment_s: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(max_segment_s > 0.0) {
        return Err(Error::InvalidConfig(format!("max_segment_s must be positive, got {max_segment_s}")));
    }
    let mut sorted = regions.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for w in sorted.windows(2) {
        if w[0].end_s > w[1].start_s {
            return Err(Error::OverlappingRegions(w[0].start_s, w[0].end_s, w[1].start_s, w[1].end_s));
        }
    }

    let mut out = Vec::new();
    for region in &sorted {
        let mut cuts = vec![region.start_s];
        cuts.extend(
            shots
                .boundaries()
                .iter()
                .copied()
                .filter(|&b| b > region.start_s && b < region.end_s),
        );
        cuts.push(region.end_s);
        for piece in cuts.windows(2) {
            let (start, end) = (piece[0], piece[1]);
            let mut k = 0u32;
            loop {
                let lo = start + f64::from(k) * max_segment_s;
                if end - lo <= max_segment_s + SPLIT_EPS {
                    out.push((lo, end));
                    break;
                }
                let hi = start + f64::from(k + 1) * max_segment_s;
                out.push((lo, hi));
                k += 1;
            }
        }
    }
    Ok(out)
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.1.min(b.1) - a.0.max(b.0)
}

/// Collects, per segment, the tracks of the same video whose span overlaps the
/// segment by more than `min_overlap_s`. Segments with no such track are
/// returned separately as dropped.
pub fn build_candidate_sets(
    segments: &[SpeechSegment],
    tracks: &[FaceTrack],
    min_overlap_s: f64,
) -> (Vec<CandidateSet>, Vec<String>) {
    let mut by_video: HashMap<&str, Vec<&FaceTrack>> = HashMap::new();
    for t in tracks {
        by_video.entry(t.video_id.as_str()).or_default().push(t);
    }
    let mut sets = Vec::new();
    let mut dropped = Vec::new();
    for s in segments {
        let track_ids: BTreeSet<String> = by_video
            .get(s.video_id.as_str())
            .into_iter()
            .flatten()
            .filter(|t| overlap((s.start_s, s.end_s), (t.start_s(), t.end_s())) > min_overlap_s)
            .map(|t| t.id.clone())
            .collect();
        if track_ids.is_empty() {
            dropped.push(s.id.clone());
        } else {
            sets.push(CandidateSet {
                segment_id: s.id.clone(),
                track_ids,
            });
        }
    }
    (sets, dropped)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub id: String,
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: String,
    pub video_id: String,
    pub embedding: Vec<f64>,
    pub boxes: Vec<FaceBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub track_id: String,
    pub box_scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxLabelRecord {
    pub box_id: String,
    pub speaking: u8,
    /// Optional identity of the person the box belongs to; enables per-speaker F1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentTruthRecord {
    pub segment_id: String,
    pub true_track_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruthRecord {
    Box(BoxLabelRecord),
    Segment(SegmentTruthRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub segment_id: String,
    pub track_id: Option<String>,
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxScoreRecord {
    pub box_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideRecord {
    pub segment_id: String,
    pub pinned_track_id: Option<String>,
    pub removed_track_ids: Vec<String>,
}

/// Labels for evaluation: per-box speaking flags and per-segment true tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub box_speaking: BTreeMap<String, bool>,
    pub box_speaker: BTreeMap<String, String>,
    /// `None` marks an off-screen speaker.
    pub segment_track: BTreeMap<String, Option<String>>,
}

impl GroundTruth {
    pub fn records(&self) -> Vec<GroundTruthRecord> {
        let mut out: Vec<GroundTruthRecord> = self
            .box_speaking
            .iter()
            .map(|(box_id, &speaking)| {
                GroundTruthRecord::Box(BoxLabelRecord {
                    box_id: box_id.clone(),
                    speaking: u8::from(speaking),
                    speaker_id: self.box_speaker.get(box_id).cloned(),
                })
            })
            .collect();
        out.extend(self.segment_track.iter().map(|(segment_id, t)| {
            GroundTruthRecord::Segment(SegmentTruthRecord {
                segment_id: segment_id.clone(),
                true_track_id: t.clone(),
            })
        }));
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub segments: PathBuf,
    pub tracks: PathBuf,
    pub scores: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub segments: Vec<SpeechSegment>,
    pub tracks: Vec<FaceTrack>,
    pub scores: Option<ActivityScores>,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn track_map(&self) -> BTreeMap<&str, &FaceTrack> {
        self.tracks.iter().map(|t| (t.id.as_str(), t)).collect()
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| parse_error(path, idx + 1, e.to_string()))?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_segments(path: &Path) -> Result<Vec<SpeechSegment>> {
    read_jsonl::<SegmentRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let embedding =
                Embedding::new(r.embedding).map_err(|e| parse_error(path, line, format!("field `embedding`: {e}")))?;
            SpeechSegment::new(r.id, r.video_id, r.start_s, r.end_s, embedding)
                .map_err(|e| parse_error(path, line, format!("fields `start_s`/`end_s`: {e}")))
        })
        .collect()
}

pub fn read_tracks(path: &Path) -> Result<Vec<FaceTrack>> {
    read_jsonl::<TrackRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let embedding =
                Embedding::new(r.embedding).map_err(|e| parse_error(path, line, format!("field `embedding`: {e}")))?;
            FaceTrack::new(r.id, r.video_id, r.boxes, embedding)
                .map_err(|e| parse_error(path, line, format!("field `boxes`: {e}")))
        })
        .collect()
}

pub fn read_scores(path: &Path) -> Result<ActivityScores> {
    let mut per_track = BTreeMap::new();
    for (line, r) in read_jsonl::<ScoreRecord>(path)? {
        if let Some(v) = r.box_scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(parse_error(path, line, format!("field `box_scores`: value {v} outside [0, 1]")));
        }
        if per_track.insert(r.track_id.clone(), r.box_scores).is_some() {
            return Err(parse_error(path, line, format!("field `track_id`: duplicate `{}`", r.track_id)));
        }
    }
    Ok(ActivityScores { per_track })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    for (line, r) in read_jsonl::<GroundTruthRecord>(path)? {
        match r {
            GroundTruthRecord::Box(b) => {
                let speaking = match b.speaking {
                    0 => false,
                    1 => true,
                    v => return Err(parse_error(path, line, format!("field `speaking`: expected 0 or 1, got {v}"))),
                };
                if let Some(s) = b.speaker_id {
                    gt.box_speaker.insert(b.box_id.clone(), s);
                }
                gt.box_speaking.insert(b.box_id, speaking);
            }
            GroundTruthRecord::Segment(s) => {
                gt.segment_track.insert(s.segment_id, s.true_track_id);
            }
        }
    }
    Ok(gt)
}

pub fn read_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    Ok(Dataset {
        segments: read_segments(&paths.segments)?,
        tracks: read_tracks(&paths.tracks)?,
        scores: paths.scores.as_deref().map(read_scores).transpose()?,
        ground_truth: paths.ground_truth.as_deref().map(read_ground_truth).transpose()?,
    })
}

pub fn segment_records(segments: &[SpeechSegment]) -> impl Iterator<Item = SegmentRecord> + '_ {
    segments.iter().map(|s| SegmentRecord {
        id: s.id.clone(),
        video_id: s.video_id.clone(),
        start_s: s.start_s,
        end_s: s.end_s,
        embedding: s.embedding.values().to_vec(),
    })
}

pub fn track_records(tracks: &[FaceTrack]) -> impl Iterator<Item = TrackRecord> + '_ {
    tracks.iter().map(|t| TrackRecord {
        id: t.id.clone(),
        video_id: t.video_id.clone(),
        embedding: t.embedding.values().to_vec(),
        boxes: t.boxes().to_vec(),
    })
}

pub fn score_records(scores: &ActivityScores) -> impl Iterator<Item = ScoreRecord> + '_ {
    scores.per_track.iter().map(|(id, v)| ScoreRecord {
        track_id: id.clone(),
        box_scores: v.clone(),
    })
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("segments.jsonl"), segment_records(&dataset.segments))?;
    write_jsonl(&dir.join("tracks.jsonl"), track_records(&dataset.tracks))?;
    if let Some(scores) = &dataset.scores {
        write_jsonl(&dir.join("av_scores.jsonl"), score_records(scores))?;
    }
    if let Some(gt) = &dataset.ground_truth {
        write_jsonl(&dir.join("ground_truth.jsonl"), gt.records())?;
    }
    Ok(())
}

pub fn assignment_records(state: &AssignmentState) -> Vec<AssignmentRecord> {
    state
        .assignment
        .iter()
        .map(|(seg, track)| AssignmentRecord {
            segment_id: seg.clone(),
            track_id: track.clone(),
            pinned: state.pinned.contains(seg),
        })
        .collect()
}

pub fn write_assignments(path: &Path, state: &AssignmentState) -> Result<()> {
    write_jsonl(path, assignment_records(state))
}

pub fn read_assignments(path: &Path) -> Result<AssignmentState> {
    let mut state = AssignmentState::default();
    for (line, r) in read_jsonl::<AssignmentRecord>(path)? {
        if r.pinned {
            if r.track_id.is_none() {
                return Err(parse_error(path, line, "field `pinned`: pinned segment without a track"));
            }
            state.pinned.insert(r.segment_id.clone());
        }
        if state.assignment.insert(r.segment_id.clone(), r.track_id).is_some() {
            return Err(parse_error(path, line, format!("field `segment_id`: duplicate `{}`", r.segment_id)));
        }
    }
    Ok(state)
}

pub fn write_box_scores(path: &Path, scores: &BTreeMap<String, f64>) -> Result<()> {
    write_jsonl(
        path,
        scores.iter().map(|(box_id, &score)| BoxScoreRecord {
            box_id: box_id.clone(),
            score,
        }),
    )
}

pub fn read_box_scores(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (line, r) in read_jsonl::<BoxScoreRecord>(path)? {
        if !r.score.is_finite() {
            return Err(parse_error(path, line, "field `score`: not finite"));
        }
        if out.insert(r.box_id.clone(), r.score).is_some() {
            return Err(parse_error(path, line, format!("field `box_id`: duplicate `{}`", r.box_id)));
        }
    }
    Ok(out)
}

/// Everything a run may emit. Absent parts are not written.
#[derive(Debug, Default)]
pub struct Outputs<'a> {
    pub assignments: Option<&'a AssignmentState>,
    pub box_scores: Option<&'a BTreeMap<String, f64>>,
    pub reports: Vec<(&'a str, serde_json::Value)>,
}

pub fn write_outputs(dir: &Path, outputs: &Outputs<'_>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(a) = outputs.assignments {
        write_assignments(&dir.join("assignments.jsonl"), a)?;
    }
    if let Some(b) = outputs.box_scores {
        write_box_scores(&dir.join("box_scores.jsonl"), b)?;
    }
    for (name, value) in &outputs.reports {
        write_json(&dir.join(name), value)?;
    }
    Ok(())
}
