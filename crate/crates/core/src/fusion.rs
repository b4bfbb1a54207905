//! Box-level scores from assignments, and late fusion with activity scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{AssignmentState, FaceTrack, SpeechSegment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Identity,
    Activity,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxScoreSet {
    pub scores: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

/// Assigned time intervals per track.
fn assigned_intervals<'a>(
    state: &'a AssignmentState,
    segments: &'a [SpeechSegment],
) -> HashMap<&'a str, Vec<(f64, f64, &'a str)>> {
    let mut out: HashMap<&str, Vec<(f64, f64, &str)>> = HashMap::new();
    for s in segments {
        if let Some(t) = state.track_of(&s.id) {
            out.entry(t).or_default().push((s.start_s, s.end_s, s.id.as_str()));
        }
    }
    out
}

/// A box scores 1 when its track is assigned to a segment whose interval
/// contains the box timestamp, 0 otherwise.
pub fn assignment_box_scores(state: &AssignmentState, segments: &[SpeechSegment], tracks: &[FaceTrack]) -> BoxScoreSet {
    let intervals = assigned_intervals(state, segments);
    let mut scores = BTreeMap::new();
    for track in tracks {
        let spans = intervals.get(track.id.as_str());
        for b in track.boxes() {
            let t = b.timestamp_s;
            let hit = spans.is_some_and(|v| v.iter().any(|&(lo, hi, _)| lo <= t && t <= hi));
            scores.insert(b.box_id.clone(), if hit { 1.0 } else { 0.0 });
        }
    }
    BoxScoreSet {
        scores,
        provenance: Provenance::Identity,
    }
}

/// Graded alternative to [`assignment_box_scores`].
///
/// Within each segment, a candidate's weight is its row-correlation gain over
/// the worst candidate, normalized to sum to one (uniform when all are equal).
/// Pinned segments give their track weight 1. A box takes the largest weight
/// its track holds in any segment containing the box timestamp.
pub fn soft_box_scores(
    candidate_scores: &BTreeMap<&str, &[(String, f64)]>,
    state: &AssignmentState,
    segments: &[SpeechSegment],
    tracks: &[FaceTrack],
) -> BoxScoreSet {
    // track -> [(start, end, weight)]
    let mut spans: HashMap<&str, Vec<(f64, f64, f64)>> = HashMap::new();
    for s in segments {
        if state.is_pinned(&s.id) {
            if let Some(t) = state.track_of(&s.id) {
                spans.entry(t).or_default().push((s.start_s, s.end_s, 1.0));
            }
            continue;
        }
        let Some(cands) = candidate_scores.get(s.id.as_str()) else {
            continue;
        };
        let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let total: f64 = cands.iter().map(|c| c.1 - min).sum();
        for (t, r) in cands.iter() {
            let w = if total > 0.0 { (r - min) / total } else { 1.0 / cands.len() as f64 };
            spans.entry(t.as_str()).or_default().push((s.start_s, s.end_s, w));
        }
    }
    let mut scores = BTreeMap::new();
    for track in tracks {
        let v = spans.get(track.id.as_str());
        for b in track.boxes() {
            let t = b.timestamp_s;
            let w = v
                .into_iter()
                .flatten()
                .filter(|&&(lo, hi, _)| lo <= t && t <= hi)
                .map(|&(_, _, w)| w)
                .fold(0.0, f64::max);
            scores.insert(b.box_id.clone(), w);
        }
    }
    BoxScoreSet {
        scores,
        provenance: Provenance::Identity,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub set: BoxScoreSet,
    /// Boxes scored only by the identity side, left out of the fused set.
    pub identity_only: usize,
    /// Boxes scored only by the activity side, left out of the fused set.
    pub activity_only: usize,
}

/// `alpha * identity + (1 - alpha) * activity` over boxes scored by both.
pub fn late_fuse(identity: &BTreeMap<String, f64>, activity: &BTreeMap<String, f64>, alpha: f64) -> Result<Fused> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut scores = BTreeMap::new();
    let mut identity_only = 0;
    for (box_id, &a) in identity {
        match activity.get(box_id) {
            Some(&b) => {
                scores.insert(box_id.clone(), alpha * a + (1.0 - alpha) * b);
            }
            None => identity_only += 1,
        }
    }
    let activity_only = activity.keys().filter(|k| !identity.contains_key(*k)).count();
    Ok(Fused {
        set: BoxScoreSet {
            scores,
            provenance: Provenance::Fused,
        },
        identity_only,
        activity_only,
    })
}
