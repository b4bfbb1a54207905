//! Synthetic labeled worlds and exhaustive oracles.
//!
//! A world is one video of back-to-back one-second speech segments. Each
//! segment has a speaking character and a set of visible characters; every
//! visible character gets a fresh face track spanning only that segment, so a
//! segment's candidate set is exactly its visible tracks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{ActivityScores, Embedding, FaceBox, FaceTrack, SpeechSegment};
use crate::error::{Error, Result};
use crate::eval::Ranked;
use crate::ingest::{Dataset, GroundTruth};
use crate::matrices::{build_fd, build_sd, objective, IdentityMatrices};

const BOXES_PER_TRACK: usize = 10;
const BOX_STEP_S: f64 = 0.1;
const CENTROID_ATTEMPTS: usize = 10_000;

/// Largest search space [`brute_force_assignment`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 100_000;
/// Largest instance [`brute_force_ap`] accepts.
pub const BRUTE_FORCE_AP_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub video_id: String,
    pub num_characters: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    pub num_segments: usize,
    /// Inclusive range for the number of visible faces per segment.
    pub visible_tracks_per_segment: (usize, usize),
    pub offscreen_prob: f64,
    /// Every character visible in every segment.
    pub panel_mode: bool,
    /// The first `num_characters` segments show only their speaker.
    pub solo_segments: bool,
    pub min_angle_deg: f64,
    /// Track-level activity score distribution of the true speaker.
    pub speaker_score: BetaParams,
    /// Track-level activity score distribution of everyone else.
    pub other_score: BetaParams,
    /// Per-box Gaussian jitter around the track-level score.
    pub box_jitter: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            video_id: "synth".into(),
            num_characters: 4,
            embed_dim: 32,
            noise_sigma: 0.1,
            num_segments: 100,
            visible_tracks_per_segment: (1, 3),
            offscreen_prob: 0.0,
            panel_mode: false,
            solo_segments: true,
            min_angle_deg: 30.0,
            speaker_score: BetaParams { alpha: 8.0, beta: 2.0 },
            other_score: BetaParams { alpha: 2.0, beta: 8.0 },
            box_jitter: 0.05,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.num_characters < 2 {
            return bad(format!("need at least 2 characters, got {}", self.num_characters));
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.offscreen_prob) {
            return bad("offscreen_prob must lie in [0, 1]".into());
        }
        let (lo, hi) = self.visible_tracks_per_segment;
        if lo > hi {
            return bad(format!("visible range ({lo}, {hi}) is empty"));
        }
        if !(self.min_angle_deg >= 0.0 && self.min_angle_deg < 180.0) {
            return bad("min_angle_deg must lie in [0, 180)".into());
        }
        for p in [self.speaker_score, self.other_score] {
            if !(p.alpha > 0.0 && p.beta > 0.0) {
                return bad("beta parameters must be positive".into());
            }
        }
        if !(self.box_jitter >= 0.0) {
            return bad("box_jitter must be >= 0".into());
        }
        // Two vectors in a plane can be at most 180 degrees apart, so in 2-D
        // the count is bounded by 360 / angle.
        if self.embed_dim == 2 && self.min_angle_deg > 0.0 {
            let max = (360.0 / self.min_angle_deg).floor() as usize;
            if self.num_characters > max {
                return bad(format!(
                    "{} characters cannot be {} degrees apart in 2 dimensions",
                    self.num_characters, self.min_angle_deg
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: WorldSpec,
    pub dataset: Dataset,
    pub centroids: Vec<Vec<f64>>,
    pub segment_speaker: BTreeMap<String, usize>,
    pub track_character: BTreeMap<String, usize>,
}

impl SynthWorld {
    pub fn ground_truth(&self) -> &GroundTruth {
        self.dataset.ground_truth.as_ref().expect("generated worlds carry labels")
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn sample_centroids(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let max_cos = spec.min_angle_deg.to_radians().cos();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.num_characters);
    let mut attempts = 0;
    while out.len() < spec.num_characters {
        attempts += 1;
        if attempts > CENTROID_ATTEMPTS * spec.num_characters {
            return Err(Error::InfeasibleSpec(format!(
                "could not place {} centroids {} degrees apart in {} dimensions",
                spec.num_characters, spec.min_angle_deg, spec.embed_dim
            )));
        }
        let mut v: Vec<f64> = (0..spec.embed_dim).map(|_| std.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        normalize(&mut v);
        if out
            .iter()
            .all(|c| c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < max_cos)
        {
            out.push(v);
        }
    }
    Ok(out)
}

fn noisy(centroid: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Embedding> {
    let mut v = centroid.to_vec();
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
        for x in v.iter_mut() {
            *x += n.sample(rng);
        }
    }
    normalize(&mut v);
    Embedding::new(v)
}

/// Builds a world deterministically from `spec.seed`.
pub fn generate(spec: &WorldSpec) -> Result<SynthWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = sample_centroids(spec, &mut rng)?;
    let beta = |p: BetaParams| Beta::new(p.alpha, p.beta).map_err(|e| Error::InfeasibleSpec(e.to_string()));
    let speaker_beta = beta(spec.speaker_score)?;
    let other_beta = beta(spec.other_score)?;
    let jitter = Normal::new(0.0, spec.box_jitter).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let k = spec.num_characters;

    let mut segments = Vec::with_capacity(spec.num_segments);
    let mut tracks = Vec::new();
    let mut scores = ActivityScores::default();
    let mut gt = GroundTruth::default();
    let mut segment_speaker = BTreeMap::new();
    let mut track_character = BTreeMap::new();

    for n in 0..spec.num_segments {
        let seg_id = format!("s{n:05}");
        let start = n as f64;
        let solo = spec.solo_segments && !spec.panel_mode && n < k;
        let speaker = if solo { n } else { rng.random_range(0..k) };

        let visible: BTreeSet<usize> = if spec.panel_mode {
            (0..k).collect()
        } else if solo {
            [speaker].into()
        } else {
            let offscreen = rng.random_bool(spec.offscreen_prob);
            let (lo, hi) = spec.visible_tracks_per_segment;
            let count = rng.random_range(lo..=hi).min(k);
            let mut set = BTreeSet::new();
            let mut others: Vec<usize> = (0..k).filter(|&c| c != speaker).collect();
            let extra = if offscreen { count } else { count.saturating_sub(1) }.min(others.len());
            if !offscreen && count > 0 {
                set.insert(speaker);
            }
            for idx in sample(&mut rng, others.len(), extra).into_iter() {
                set.insert(others[idx]);
            }
            others.clear();
            set
        };

        let speech = noisy(&centroids[speaker], spec.noise_sigma, &mut rng)?;
        segments.push(SpeechSegment::new(&seg_id, &spec.video_id, start, start + 1.0, speech)?);
        segment_speaker.insert(seg_id.clone(), speaker);

        let mut true_track = None;
        for &c in &visible {
            let track_id = format!("{seg_id}_c{c}");
            let is_speaker = c == speaker;
            let boxes = (0..BOXES_PER_TRACK)
                .map(|b| {
                    let t = start + BOX_STEP_S * (b as f64 + 0.5);
                    FaceBox::new(format!("{track_id}_b{b}"), t, 10.0 * c as f64, 0.0, 10.0 * c as f64 + 8.0, 8.0)
                })
                .collect::<Result<Vec<_>>>()?;
            let base = if is_speaker {
                speaker_beta.sample(&mut rng)
            } else {
                other_beta.sample(&mut rng)
            };
            let box_scores: Vec<f64> = (0..BOXES_PER_TRACK)
                .map(|_| (base + jitter.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            let face = noisy(&centroids[c], spec.noise_sigma, &mut rng)?;
            for b in &boxes {
                gt.box_speaking.insert(b.box_id.clone(), is_speaker);
                gt.box_speaker.insert(b.box_id.clone(), format!("c{c}"));
            }
            if is_speaker {
                true_track = Some(track_id.clone());
            }
            scores.per_track.insert(track_id.clone(), box_scores);
            track_character.insert(track_id.clone(), c);
            tracks.push(FaceTrack::new(track_id, &spec.video_id, boxes, face)?);
        }
        gt.segment_track.insert(seg_id, true_track);
    }

    Ok(SynthWorld {
        spec: spec.clone(),
        dataset: Dataset {
            segments,
            tracks,
            scores: Some(scores),
            ground_truth: Some(gt),
        },
        centroids,
        segment_speaker,
        track_character,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub assignment: Vec<String>,
    pub objective: f64,
    /// Other assignments within `1e-12` of the optimum.
    pub ties: Vec<Vec<String>>,
    pub evaluated: usize,
}

/// Exhaustive maximization of the row-wise Pearson objective.
///
/// Every assignment is scored from scratch with freshly built matrices. Among
/// equal optima the lexicographically smallest id vector wins.
pub fn brute_force_assignment(segments: &[&SpeechSegment], candidates: &[Vec<&FaceTrack>]) -> Result<BruteForce> {
    if segments.len() != candidates.len() {
        return Err(Error::LengthMismatch {
            left: segments.len(),
            right: candidates.len(),
        });
    }
    let space: u128 = candidates.iter().map(|c| c.len() as u128).product();
    if space > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge(space));
    }
    if let Some((i, _)) = candidates.iter().enumerate().find(|(_, c)| c.is_empty()) {
        return Err(Error::entity("segment", &segments[i].id, "empty candidate set"));
    }
    let order: Vec<String> = segments.iter().map(|s| s.id.clone()).collect();
    let sd = build_sd(&segments.iter().map(|s| &s.embedding).collect::<Vec<_>>())?;

    let mut digits = vec![0usize; candidates.len()];
    let mut scored: Vec<(f64, Vec<String>)> = Vec::with_capacity(space as usize);
    loop {
        let chosen: Vec<Option<&Embedding>> = digits
            .iter()
            .zip(candidates)
            .map(|(&d, c)| Some(&c[d].embedding))
            .collect();
        let fd = build_fd(&chosen, &order)?;
        let value = objective(&IdentityMatrices::new(sd.clone(), fd, order.clone())?);
        let ids = digits.iter().zip(candidates).map(|(&d, c)| c[d].id.clone()).collect();
        scored.push((value, ids));

        let mut pos = 0;
        loop {
            if pos == digits.len() {
                return Ok(finish(scored));
            }
            digits[pos] += 1;
            if digits[pos] < candidates[pos].len() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

fn finish(scored: Vec<(f64, Vec<String>)>) -> BruteForce {
    let evaluated = scored.len();
    let best_value = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let mut optima: Vec<Vec<String>> = scored
        .into_iter()
        .filter(|(v, _)| *v >= best_value - 1e-12)
        .map(|(_, ids)| ids)
        .collect();
    optima.sort();
    let assignment = optima.remove(0);
    BruteForce {
        assignment,
        objective: best_value,
        ties: optima,
        evaluated,
    }
}

/// Average precision by explicit rank tabulation. Ranks come from pairwise
/// counting rather than sorting.
pub fn brute_force_ap(items: &[Ranked<'_>]) -> Result<f64> {
    if items.len() > BRUTE_FORCE_AP_LIMIT {
        return Err(Error::SearchSpaceTooLarge(items.len() as u128));
    }
    let n = items.len();
    let total_pos = items.iter().filter(|r| r.positive).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let precedes = |a: &Ranked<'_>, b: &Ranked<'_>| a.score > b.score || (a.score == b.score && a.id < b.id);
    let mut at_rank: Vec<Option<usize>> = vec![None; n];
    for (i, item) in items.iter().enumerate() {
        let rank = items.iter().filter(|o| precedes(o, item)).count();
        at_rank[rank] = Some(i);
    }
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut hits = 0usize;
    for (k, slot) in at_rank.iter().enumerate() {
        let i = slot.expect("ranks form a permutation when ids are unique");
        if items[i].positive {
            hits += 1;
        }
        precision.push(hits as f64 / (k + 1) as f64);
        recall.push(hits);
    }
    let mut sum = 0.0;
    let mut prev_recall = 0;
    for k in 0..n {
        if recall[k] > prev_recall {
            sum += precision[k];
        }
        prev_recall = recall[k];
    }
    Ok(sum / total_pos as f64)
}
