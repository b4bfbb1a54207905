//! Positive and negative guides derived from external activity scores.
//!
//! A track's activity score is the mean of its box scores. A segment is a
//! positive guide when its best-scoring candidate exceeds `tau_p`; that track is
//! pinned. Candidates scoring below `tau_n` are negative guides and are removed
//! from the segment's candidate set.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{ActivityScores, CandidateSet};
use crate::error::{Error, Result};
use crate::ingest::GuideRecord;

/// How to treat candidate tracks that have no activity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnscoredPolicy {
    #[default]
    Error,
    /// Such tracks are neither pinned nor removed.
    NeverGuide,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuideSet {
    pub positive: BTreeMap<String, String>,
    pub negative: BTreeMap<String, BTreeSet<String>>,
}

impl GuideSet {
    pub fn records(&self) -> Vec<GuideRecord> {
        let ids: BTreeSet<&String> = self.positive.keys().chain(self.negative.keys()).collect();
        ids.into_iter()
            .map(|id| GuideRecord {
                segment_id: id.clone(),
                pinned_track_id: self.positive.get(id).cloned(),
                removed_track_ids: self
                    .negative
                    .get(id)
                    .map(|s| s.iter().cloned().collect())
                    .unwrap_or_default(),
            })
            .collect()
    }

    pub fn from_records(records: impl IntoIterator<Item = GuideRecord>) -> Self {
        let mut out = Self::default();
        for r in records {
            if let Some(t) = r.pinned_track_id {
                out.positive.insert(r.segment_id.clone(), t);
            }
            if !r.removed_track_ids.is_empty() {
                out.negative
                    .insert(r.segment_id, r.removed_track_ids.into_iter().collect());
            }
        }
        out
    }

    pub fn removed_count(&self) -> usize {
        self.negative.values().map(BTreeSet::len).sum()
    }
}

/// Mean box score of a track.
pub fn track_score(scores: &ActivityScores, track_id: &str) -> Result<f64> {
    match scores.get(track_id) {
        Some(v) if !v.is_empty() => Ok(v.iter().sum::<f64>() / v.len() as f64),
        _ => Err(Error::UnscoredTrack(track_id.to_string())),
    }
}

fn scored(scores: &ActivityScores, track_id: &str, policy: UnscoredPolicy) -> Result<Option<f64>> {
    match track_score(scores, track_id) {
        Ok(s) => Ok(Some(s)),
        Err(_) if policy == UnscoredPolicy::NeverGuide => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pins each segment whose top-scoring candidate exceeds `tau_p`.
///
/// Ties at the top go to the lexicographically smallest track id.
pub fn build_positive_guides(
    candidates: &[CandidateSet],
    scores: &ActivityScores,
    tau_p: f64,
    policy: UnscoredPolicy,
) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for set in candidates {
        let mut best: Option<(&String, f64)> = None;
        // BTreeSet iterates in lexicographic order, so strict `>` keeps the first of a tie.
        for track in &set.track_ids {
            if let Some(s) = scored(scores, track, policy)? {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((track, s));
                }
            }
        }
        if let Some((track, s)) = best {
            if s > tau_p {
                out.insert(set.segment_id.clone(), track.clone());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeGuides {
    pub removed: BTreeMap<String, BTreeSet<String>>,
    /// Candidate sets after removal that still have members.
    pub candidates: Vec<CandidateSet>,
    /// Segments whose candidate set became empty.
    pub emptied: Vec<String>,
}

/// Removes candidates scoring below `tau_n`. A pinned track is never removed.
pub fn build_negative_guides(
    candidates: &[CandidateSet],
    scores: &ActivityScores,
    tau_n: f64,
    positive: &BTreeMap<String, String>,
    policy: UnscoredPolicy,
) -> Result<NegativeGuides> {
    let mut removed = BTreeMap::new();
    let mut kept_sets = Vec::new();
    let mut emptied = Vec::new();
    for set in candidates {
        let pinned = positive.get(&set.segment_id);
        let mut gone = BTreeSet::new();
        for track in &set.track_ids {
            if Some(track) == pinned {
                continue;
            }
            if let Some(s) = scored(scores, track, policy)? {
                if s < tau_n {
                    gone.insert(track.clone());
                }
            }
        }
        let kept: BTreeSet<String> = set.track_ids.difference(&gone).cloned().collect();
        if !gone.is_empty() {
            removed.insert(set.segment_id.clone(), gone);
        }
        if kept.is_empty() {
            emptied.push(set.segment_id.clone());
        } else {
            kept_sets.push(CandidateSet {
                segment_id: set.segment_id.clone(),
                track_ids: kept,
            });
        }
    }
    Ok(NegativeGuides {
        removed,
        candidates: kept_sets,
        emptied,
    })
}

/// Both guide types in one pass, positive first so pins survive removal.
pub fn build_guides(
    candidates: &[CandidateSet],
    scores: &ActivityScores,
    tau_p: f64,
    tau_n: f64,
    policy: UnscoredPolicy,
) -> Result<(GuideSet, NegativeGuides)> {
    let positive = build_positive_guides(candidates, scores, tau_p, policy)?;
    let negative = build_negative_guides(candidates, scores, tau_n, &positive, policy)?;
    let guides = GuideSet {
        positive,
        negative: negative.removed.clone(),
    };
    Ok((guides, negative))
}
