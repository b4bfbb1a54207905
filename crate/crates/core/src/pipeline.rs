//! End-to-end association over a dataset of one or more videos.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AssignmentState, CandidateSet, Config, SpeechSegment};
use crate::error::{Error, Result};
use crate::guidance::{build_guides, GuideSet, UnscoredPolicy};
use crate::ingest::{build_candidate_sets, Dataset};
use crate::optimizer::{partition_segments, Partition, PartitionRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Identity association only.
    Scmia,
    /// Identity association guided by activity scores.
    Gscmia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRun {
    pub video_id: String,
    pub partition_index: usize,
    pub run: PartitionRun,
}

#[derive(Debug, Clone)]
pub struct AssociationResult {
    /// Every input segment; `None` where no assignment was made.
    pub state: AssignmentState,
    pub runs: Vec<VideoRun>,
    /// Candidate sets before any negative guidance.
    pub candidates: Vec<CandidateSet>,
    /// Segments with no overlapping track.
    pub dropped: Vec<String>,
    /// Segments whose candidates were all removed by negative guides.
    pub emptied: Vec<String>,
    /// Surviving segments left alone because their video had fewer than two.
    pub skipped: Vec<String>,
    pub guides: Option<GuideSet>,
}

impl AssociationResult {
    /// Per-segment candidate row correlations at the final state.
    pub fn candidate_scores(&self) -> BTreeMap<&str, &[(String, f64)]> {
        self.runs
            .iter()
            .flat_map(|r| {
                r.run
                    .segment_ids
                    .iter()
                    .zip(&r.run.candidate_scores)
                    .map(|(s, c)| (s.as_str(), c.as_slice()))
            })
            .collect()
    }

    pub fn objective_trace(&self) -> serde_json::Value {
        let parts: Vec<serde_json::Value> = self
            .runs
            .iter()
            .map(|r| {
                serde_json::json!({
                    "video_id": r.video_id,
                    "partition": r.partition_index,
                    "segments": r.run.segment_ids.len(),
                    "initial_objective": r.run.initial_objective,
                    "trace": r.run.trace,
                    "final_objective": r.run.final_objective,
                    "sweeps": r.run.sweeps,
                    "converged": r.run.converged,
                    "restart_objectives": r.run.restart_objectives,
                })
            })
            .collect();
        serde_json::json!({ "partitions": parts })
    }
}

pub fn associate(dataset: &Dataset, config: &Config, mode: Mode, policy: UnscoredPolicy) -> Result<AssociationResult> {
    config.validate()?;
    let (candidates, dropped) = build_candidate_sets(&dataset.segments, &dataset.tracks, config.min_overlap_s);

    let (working, guides, emptied) = match mode {
        Mode::Scmia => (candidates.clone(), None, Vec::new()),
        Mode::Gscmia => {
            let scores = dataset
                .scores
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("guided mode needs activity scores".into()))?;
            let (guides, negative) = build_guides(&candidates, scores, config.tau_p, config.tau_n, policy)?;
            (negative.candidates, Some(guides), negative.emptied)
        }
    };
    let pinned = guides.as_ref().map(|g| g.positive.clone()).unwrap_or_default();
    let cand_map: BTreeMap<String, BTreeSet<String>> = working
        .iter()
        .map(|c| (c.segment_id.clone(), c.track_ids.clone()))
        .collect();

    let mut by_video: BTreeMap<&str, Vec<&SpeechSegment>> = BTreeMap::new();
    for s in &dataset.segments {
        if cand_map.contains_key(&s.id) {
            by_video.entry(s.video_id.as_str()).or_default().push(s);
        }
    }

    let mut state = AssignmentState::default();
    for s in &dataset.segments {
        state.assignment.insert(s.id.clone(), None);
    }

    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    for (video, mut segs) in by_video {
        segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then_with(|| a.id.cmp(&b.id)));
        if segs.len() < 2 {
            for s in segs {
                skipped.push(s.id.clone());
                if let Some(t) = pinned.get(&s.id) {
                    state.assignment.insert(s.id.clone(), Some(t.clone()));
                    state.pinned.insert(s.id.clone());
                }
            }
            continue;
        }
        for (partition_index, part) in partition_segments(&segs, config.context_length)?.into_iter().enumerate() {
            tasks.push((video, partition_index, part));
        }
    }

    let tracks = dataset.track_map();
    let runs: Vec<VideoRun> = tasks
        .par_iter()
        .enumerate()
        .map(|(stream, (video, partition_index, part))| {
            let partition = Partition::new(part, &cand_map, &pinned, &tracks)?;
            Ok(VideoRun {
                video_id: video.to_string(),
                partition_index: *partition_index,
                run: partition.optimize(config, stream as u64),
            })
        })
        .collect::<Result<_>>()?;

    for r in &runs {
        let s = r.run.to_state();
        state.assignment.extend(s.assignment);
        state.pinned.extend(s.pinned);
    }

    Ok(AssociationResult {
        state,
        runs,
        candidates,
        dropped,
        emptied,
        skipped,
        guides,
    })
}
