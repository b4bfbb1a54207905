//! Guide-aware coordinate ascent on the row-wise Pearson objective.
//!
//! Each partition is solved independently. A sweep visits segments in order,
//! skips pinned ones, and moves each remaining segment to the candidate whose
//! face row correlates best with its speech row, updating that row and column
//! of the face matrix immediately. Sweeps repeat while the full objective
//! increases. A sweep that lowers the full objective (possible because the
//! candidate choice only looks at row `i`) is rolled back and ends the run, so
//! the recorded trace never decreases.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AssignmentState, Config, FaceTrack, SpeechSegment};
use crate::error::{Error, Result};
use crate::matrices::{self, pearson_unchecked, IdentityMatrices, SquareMatrix};

/// Margin a challenger must clear to displace the current best candidate.
const TIE_EPS: f64 = 1e-12;

/// Splits an ordered list into consecutive chunks of `context_length`.
/// A final chunk with fewer than two items is merged into the previous one.
pub fn partition_segments<T: Clone>(items: &[T], context_length: usize) -> Result<Vec<Vec<T>>> {
    if context_length < 2 {
        return Err(Error::InvalidConfig(format!(
            "context_length must be >= 2, got {context_length}"
        )));
    }
    if items.len() < 2 {
        return Err(Error::TooFewSegments(items.len()));
    }
    let mut parts: Vec<Vec<T>> = items.chunks(context_length).map(<[T]>::to_vec).collect();
    if parts.len() > 1 && parts.last().is_some_and(|p| p.len() < 2) {
        let tail = parts.pop().unwrap_or_default();
        if let Some(prev) = parts.last_mut() {
            prev.extend(tail);
        }
    }
    Ok(parts)
}

/// One partition's search problem, with every id resolved to an index.
#[derive(Debug, Clone)]
pub struct Partition {
    segment_ids: Vec<String>,
    track_ids: Vec<String>,
    sd: SquareMatrix,
    /// Cosine similarity between every pair of local tracks (diagonal included).
    track_sim: SquareMatrix,
    /// Local track indices per segment, ascending by track id.
    candidates: Vec<Vec<usize>>,
    pinned: Vec<Option<usize>>,
}

/// Mutable search state: chosen local track per segment and the face matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub assign: Vec<usize>,
    pub fd: SquareMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRun {
    pub segment_ids: Vec<String>,
    pub assignment: Vec<String>,
    pub pinned: Vec<bool>,
    pub initial_objective: f64,
    /// Full objective after each accepted sweep.
    pub trace: Vec<f64>,
    pub final_objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Final objective of every restart, in run order.
    pub restart_objectives: Vec<f64>,
    /// Row correlation of every candidate at the final state, per segment.
    #[serde(skip)]
    pub candidate_scores: Vec<Vec<(String, f64)>>,
}

impl PartitionRun {
    pub fn to_state(&self) -> AssignmentState {
        let mut state = AssignmentState::default();
        for ((seg, track), &pinned) in self.segment_ids.iter().zip(&self.assignment).zip(&self.pinned) {
            state.assignment.insert(seg.clone(), Some(track.clone()));
            if pinned {
                state.pinned.insert(seg.clone());
            }
        }
        state
    }
}

impl Partition {
    /// `candidates` must hold a non-empty set for every segment; `pinned`
    /// tracks must belong to the segment's set.
    pub fn new(
        segments: &[&SpeechSegment],
        candidates: &BTreeMap<String, BTreeSet<String>>,
        pinned: &BTreeMap<String, String>,
        tracks: &BTreeMap<&str, &FaceTrack>,
    ) -> Result<Self> {
        let segment_ids: Vec<String> = segments.iter().map(|s| s.id.clone()).collect();
        let sd = matrices::build_sd(&segments.iter().map(|s| &s.embedding).collect::<Vec<_>>())?;

        let mut local: BTreeSet<&str> = BTreeSet::new();
        for id in &segment_ids {
            let set = candidates
                .get(id)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::entity("segment", id, "empty candidate set"))?;
            local.extend(set.iter().map(String::as_str));
        }
        let track_ids: Vec<String> = local.iter().map(|s| s.to_string()).collect();
        let index: BTreeMap<&str, usize> = local.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let embeddings = track_ids
            .iter()
            .map(|t| {
                tracks
                    .get(t.as_str())
                    .map(|tr| &tr.embedding)
                    .ok_or_else(|| Error::UnknownTrack(t.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(e) = embeddings.iter().find(|e| e.dim() != embeddings[0].dim()) {
            return Err(Error::DimensionMismatch {
                left: embeddings[0].dim(),
                right: e.dim(),
            });
        }
        let track_sim = SquareMatrix::from_fn(track_ids.len(), |a, b| {
            matrices::cosine_unchecked(embeddings[a], embeddings[b])
        });

        let mut cand = Vec::with_capacity(segment_ids.len());
        let mut pins = Vec::with_capacity(segment_ids.len());
        for id in &segment_ids {
            let set = &candidates[id];
            cand.push(set.iter().map(|t| index[t.as_str()]).collect::<Vec<_>>());
            pins.push(match pinned.get(id) {
                Some(t) if set.contains(t) => Some(index[t.as_str()]),
                Some(t) => {
                    return Err(Error::entity(
                        "segment",
                        id,
                        format!("pinned track `{t}` is not a candidate"),
                    ))
                }
                None => None,
            });
        }
        Ok(Self {
            segment_ids,
            track_ids,
            sd,
            track_sim,
            candidates: cand,
            pinned: pins,
        })
    }

    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn track_id(&self, local: usize) -> &str {
        &self.track_ids[local]
    }

    /// Local track indices open to segment `i`.
    pub fn candidates(&self, i: usize) -> &[usize] {
        &self.candidates[i]
    }

    pub fn sd(&self) -> &SquareMatrix {
        &self.sd
    }

    /// Pinned segments take their guide track; the rest draw uniformly from
    /// their candidate set.
    pub fn initialize(&self, rng: &mut impl Rng) -> Vec<usize> {
        self.candidates
            .iter()
            .zip(&self.pinned)
            .map(|(cands, pin)| match pin {
                Some(p) => *p,
                None => cands[rng.random_range(0..cands.len())],
            })
            .collect()
    }

    pub fn state_for(&self, assign: Vec<usize>) -> SearchState {
        let fd = SquareMatrix::symmetric_unit(assign.len(), |i, j| self.track_sim.get(assign[i], assign[j]));
        SearchState { assign, fd }
    }

    pub fn matrices(&self, state: &SearchState) -> IdentityMatrices {
        IdentityMatrices {
            sd: self.sd.clone(),
            fd: state.fd.clone(),
            segment_order: self.segment_ids.clone(),
        }
    }

    pub fn objective(&self, state: &SearchState) -> f64 {
        let n = self.len();
        (0..n).map(|i| pearson_unchecked(self.sd.row(i), state.fd.row(i))).sum::<f64>() / n as f64
    }

    fn fill_row(&self, state: &SearchState, i: usize, candidate: usize, row: &mut [f64]) {
        let sims = self.track_sim.row(candidate);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = if j == i { 1.0 } else { sims[state.assign[j]] };
        }
    }

    /// Row-`i` correlation if segment `i` took local track `candidate`.
    pub fn row_score(&self, state: &SearchState, i: usize, candidate: usize) -> f64 {
        let mut row = vec![0.0; self.len()];
        self.fill_row(state, i, candidate, &mut row);
        pearson_unchecked(self.sd.row(i), &row)
    }

    /// One pass over all segments. Returns the full objective afterwards.
    pub fn sweep(&self, state: &mut SearchState) -> f64 {
        let n = self.len();
        let mut row = vec![0.0; n];
        let mut best_row = vec![0.0; n];
        for i in 0..n {
            if self.pinned[i].is_some() || self.candidates[i].len() < 2 {
                continue;
            }
            let current = state.assign[i];
            let mut best = current;
            self.fill_row(state, i, current, &mut best_row);
            let mut best_score = pearson_unchecked(self.sd.row(i), &best_row);
            for &cand in &self.candidates[i] {
                if cand == current {
                    continue;
                }
                self.fill_row(state, i, cand, &mut row);
                let score = pearson_unchecked(self.sd.row(i), &row);
                if score > best_score + TIE_EPS {
                    best = cand;
                    best_score = score;
                    std::mem::swap(&mut row, &mut best_row);
                }
            }
            if best != current {
                state.assign[i] = best;
                state.fd.set_cross(i, &best_row);
            }
        }
        self.objective(state)
    }

    fn run_once(&self, config: &Config, rng: &mut impl Rng) -> (SearchState, f64, Vec<f64>, usize, bool) {
        let mut state = self.state_for(self.initialize(rng));
        let initial = self.objective(&state);
        let mut prev = initial;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < config.max_sweeps {
            let snapshot = state.clone();
            let value = self.sweep(&mut state);
            sweeps += 1;
            if value < prev {
                state = snapshot;
                converged = true;
                break;
            }
            trace.push(value);
            if value - prev < config.convergence_eps {
                converged = true;
                break;
            }
            prev = value;
        }
        (state, initial, trace, sweeps, converged)
    }

    /// Runs `config.restarts` independent ascents and keeps the best.
    ///
    /// `stream` selects this partition's random stream under `config.rng_seed`.
    pub fn optimize(&self, config: &Config, stream: u64) -> PartitionRun {
        let mut best: Option<(SearchState, f64, Vec<f64>, usize, bool)> = None;
        let mut restart_objectives = Vec::with_capacity(config.restarts);
        for restart in 0..config.restarts {
            let mut rng = partition_rng(config.rng_seed, stream, restart);
            let run = self.run_once(config, &mut rng);
            let value = self.objective(&run.0);
            restart_objectives.push(value);
            if best.as_ref().is_none_or(|b| value > self.objective(&b.0)) {
                best = Some(run);
            }
        }
        let (state, initial_objective, trace, sweeps, converged) = best.expect("restarts >= 1");
        let candidate_scores = (0..self.len())
            .map(|i| {
                self.candidates[i]
                    .iter()
                    .map(|&c| (self.track_ids[c].clone(), self.row_score(&state, i, c)))
                    .collect()
            })
            .collect();
        PartitionRun {
            segment_ids: self.segment_ids.clone(),
            assignment: state.assign.iter().map(|&t| self.track_ids[t].clone()).collect(),
            pinned: self.pinned.iter().map(Option::is_some).collect(),
            initial_objective,
            final_objective: self.objective(&state),
            trace,
            sweeps,
            converged,
            restart_objectives,
            candidate_scores,
        }
    }
}

/// Deterministic generator for one (partition, restart) pair.
pub fn partition_rng(seed: u64, stream: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(restart as u64) << 40);
    rng
}

/// Seeded initialization expressed in domain terms.
pub fn initialize(partition: &Partition, rng_seed: u64, stream: u64) -> AssignmentState {
    let assign = partition.initialize(&mut partition_rng(rng_seed, stream, 0));
    let mut state = AssignmentState::default();
    for (i, (seg, t)) in partition.segment_ids.iter().zip(assign).enumerate() {
        state.assignment.insert(seg.clone(), Some(partition.track_ids[t].clone()));
        if partition.pinned[i].is_some() {
            state.pinned.insert(seg.clone());
        }
    }
    state
}
