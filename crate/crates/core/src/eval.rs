//! Detection metrics and the ablation analytics built on them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AssignmentState, CandidateSet, Config, FaceTrack};
use crate::error::{Error, Result};
use crate::fusion::assignment_box_scores;
use crate::guidance::{GuideSet, UnscoredPolicy};
use crate::ingest::{Dataset, GroundTruth};
use crate::pipeline::{associate, Mode};

/// One scored, labeled item. `id` breaks score ties (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<'a> {
    pub id: &'a str,
    pub score: f64,
    pub positive: bool,
}

/// Descending score, then ascending id.
pub fn rank_order(items: &[Ranked<'_>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .score
            .total_cmp(&items[a].score)
            .then_with(|| items[a].id.cmp(items[b].id))
    });
    order
}

/// Non-interpolated average precision: the mean of precision at each positive's rank.
pub fn average_precision(items: &[Ranked<'_>]) -> Result<f64> {
    let positives = items.iter().filter(|r| r.positive).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &idx) in rank_order(items).iter().enumerate() {
        if items[idx].positive {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub per_video: BTreeMap<String, f64>,
    pub mean_ap: f64,
    /// Videos left out because they have no positive box.
    pub videos_without_positives: Vec<String>,
    /// Labeled boxes that had no score and were ranked with score 0.
    pub unscored_boxes: usize,
}

/// Unweighted mean of per-video AP. Videos with no positives are skipped.
pub fn mean_ap(per_video: &BTreeMap<String, Vec<Ranked<'_>>>) -> Result<ApReport> {
    let mut aps = BTreeMap::new();
    let mut skipped = Vec::new();
    for (video, items) in per_video {
        match average_precision(items) {
            Ok(ap) => {
                aps.insert(video.clone(), ap);
            }
            Err(Error::NoPositives) => skipped.push(video.clone()),
            Err(e) => return Err(e),
        }
    }
    if aps.is_empty() {
        return Err(Error::NoPositives);
    }
    let mean = aps.values().sum::<f64>() / aps.len() as f64;
    Ok(ApReport {
        per_video: aps,
        mean_ap: mean,
        videos_without_positives: skipped,
        unscored_boxes: 0,
    })
}

/// Box-level mAP of `scores` against the labels in `gt`, grouping boxes by video.
pub fn box_map(scores: &BTreeMap<String, f64>, tracks: &[FaceTrack], gt: &GroundTruth) -> Result<ApReport> {
    let mut per_video: BTreeMap<String, Vec<Ranked<'_>>> = BTreeMap::new();
    let mut unscored = 0;
    for t in tracks {
        for b in t.boxes() {
            let Some(&positive) = gt.box_speaking.get(&b.box_id) else {
                continue;
            };
            let score = scores.get(&b.box_id).copied().unwrap_or_else(|| {
                unscored += 1;
                0.0
            });
            per_video.entry(t.video_id.clone()).or_default().push(Ranked {
                id: &b.box_id,
                score,
                positive,
            });
        }
    }
    let mut report = mean_ap(&per_video)?;
    report.unscored_boxes = unscored;
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl BinaryCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// Two-class support-weighted F1.
    pub fn weighted_f1(&self) -> f64 {
        let f1 = |tp: usize, fp: usize, fn_: usize| {
            let d = 2 * tp + fp + fn_;
            if d == 0 {
                0.0
            } else {
                2.0 * tp as f64 / d as f64
            }
        };
        let pos_support = self.tp + self.fn_;
        let neg_support = self.tn + self.fp;
        let total = pos_support + neg_support;
        if total == 0 {
            return 0.0;
        }
        // For the negative class the roles of fp and fn swap.
        let f_pos = f1(self.tp, self.fp, self.fn_);
        let f_neg = f1(self.tn, self.fn_, self.fp);
        (f_pos * pos_support as f64 + f_neg * neg_support as f64) / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_speaker: BTreeMap<String, f64>,
    /// Unweighted mean over speakers.
    pub average: f64,
    /// Labeled boxes with no prediction or no speaker, left out.
    pub skipped_boxes: usize,
}

/// Per-speaker support-weighted F1 of the speaking / not-speaking classes.
pub fn weighted_f1(
    predictions: &BTreeMap<String, bool>,
    ground_truth: &BTreeMap<String, bool>,
    speaker_ids: &BTreeMap<String, String>,
) -> F1Report {
    let mut counts: BTreeMap<&str, BinaryCounts> = BTreeMap::new();
    let mut skipped = 0;
    for (box_id, &actual) in ground_truth {
        match (predictions.get(box_id), speaker_ids.get(box_id)) {
            (Some(&p), Some(speaker)) => counts.entry(speaker).or_default().add(p, actual),
            _ => skipped += 1,
        }
    }
    let per_speaker: BTreeMap<String, f64> = counts.iter().map(|(k, c)| (k.to_string(), c.weighted_f1())).collect();
    let average = if per_speaker.is_empty() {
        0.0
    } else {
        per_speaker.values().sum::<f64>() / per_speaker.len() as f64
    };
    F1Report {
        per_speaker,
        average,
        skipped_boxes: skipped,
    }
}

/// Agreement of two systems on one ground-truth class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub both_correct: usize,
    pub only_a_correct: usize,
    pub only_b_correct: usize,
    pub both_wrong: usize,
}

impl Agreement {
    pub fn total(&self) -> usize {
        self.both_correct + self.only_a_correct + self.only_b_correct + self.both_wrong
    }

    fn add(&mut self, a_ok: bool, b_ok: bool) {
        match (a_ok, b_ok) {
            (true, true) => self.both_correct += 1,
            (true, false) => self.only_a_correct += 1,
            (false, true) => self.only_b_correct += 1,
            (false, false) => self.both_wrong += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossConfusion {
    pub positive: Agreement,
    pub negative: Agreement,
}

/// Splits boxes by ground-truth class and tallies where systems A and B agree.
pub fn cross_system_confusion(
    preds_a: &BTreeMap<String, bool>,
    preds_b: &BTreeMap<String, bool>,
    ground_truth: &BTreeMap<String, bool>,
) -> Result<CrossConfusion> {
    if preds_a.len() != preds_b.len() || preds_a.keys().any(|k| !preds_b.contains_key(k)) {
        return Err(Error::CoverageMismatch("systems A and B predict different boxes".into()));
    }
    let mut out = CrossConfusion::default();
    for (box_id, &a) in preds_a {
        let &actual = ground_truth
            .get(box_id)
            .ok_or_else(|| Error::CoverageMismatch(format!("box `{box_id}` has no label")))?;
        let b = preds_b[box_id];
        let cell = if actual { &mut out.positive } else { &mut out.negative };
        cell.add(a == actual, b == actual);
    }
    Ok(out)
}

fn counts_at(scores: &[f64], labels: &[bool], threshold: f64) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        c.add(s >= threshold, l);
    }
    c
}

/// Threshold (predict `score >= t`) at which precision and recall are closest.
///
/// Bisects over the sorted distinct scores: lowering the threshold raises
/// recall and tends to lower precision, so the sign of `precision - recall`
/// steers the search. The best gap seen is returned.
pub fn equal_precision_recall_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::NoPositives);
    }
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let gap = |t: f64| {
        let c = counts_at(scores, labels, t);
        c.precision().unwrap_or(1.0) - c.recall().unwrap_or(0.0)
    };
    // Index 0 is the highest threshold (fewest predictions).
    let (mut lo, mut hi) = (0usize, distinct.len() - 1);
    let mut best = (gap(distinct[lo]).abs(), distinct[lo]);
    let g_hi = gap(distinct[hi]);
    if g_hi.abs() < best.0 {
        best = (g_hi.abs(), distinct[hi]);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let g = gap(distinct[mid]);
        if g.abs() < best.0 {
            best = (g.abs(), distinct[mid]);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

/// Binarizes box scores at the equal precision/recall threshold.
pub fn threshold_predictions(scores: &BTreeMap<String, f64>, gt: &BTreeMap<String, bool>) -> Result<(f64, BTreeMap<String, bool>)> {
    let keys: Vec<&String> = scores.keys().filter(|k| gt.contains_key(*k)).collect();
    let s: Vec<f64> = keys.iter().map(|k| scores[*k]).collect();
    let l: Vec<bool> = keys.iter().map(|k| gt[*k]).collect();
    let t = equal_precision_recall_threshold(&s, &l)?;
    Ok((t, keys.into_iter().map(|k| (k.clone(), scores[k] >= t)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideCounts {
    pub count: usize,
    pub fraction: f64,
    pub accuracy: Option<f64>,
    pub effective_count: usize,
    pub effective_fraction: f64,
    pub effective_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideStats {
    pub segments: usize,
    pub candidate_tracks: usize,
    pub positive: GuideCounts,
    pub negative: GuideCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Size and accuracy of the positive and negative guides, in total and
/// restricted to the guides that changed what the unguided run decided.
///
/// `candidates` are the sets before negative guidance; their segments form the
/// denominator for the positive fractions, and their total size for the
/// negative fractions.
pub fn guide_stats(
    guides: &GuideSet,
    candidates: &[CandidateSet],
    unguided: &AssignmentState,
    gt: &GroundTruth,
) -> Result<GuideStats> {
    if unguided.assignment.is_empty() {
        return Err(Error::MissingGroundTruth("unguided run".into()));
    }
    let truth = |seg: &str| {
        gt.segment_track
            .get(seg)
            .map(Option::as_deref)
            .ok_or_else(|| Error::MissingGroundTruth(format!("segment `{seg}`")))
    };
    let segments = candidates.len();
    let candidate_tracks: usize = candidates.iter().map(CandidateSet::len).sum();

    let (mut pg_ok, mut eff, mut eff_ok) = (0, 0, 0);
    for (seg, pinned) in &guides.positive {
        let correct = truth(seg)? == Some(pinned.as_str());
        pg_ok += usize::from(correct);
        if unguided.track_of(seg) != Some(pinned.as_str()) {
            eff += 1;
            eff_ok += usize::from(correct);
        }
    }
    let pg = guides.positive.len();

    let (mut ng, mut ng_ok, mut ng_eff, mut ng_eff_ok) = (0, 0, 0, 0);
    for (seg, removed) in &guides.negative {
        let t = truth(seg)?;
        for track in removed {
            let correct = t != Some(track.as_str());
            ng += 1;
            ng_ok += usize::from(correct);
            if unguided.track_of(seg) == Some(track.as_str()) {
                ng_eff += 1;
                ng_eff_ok += usize::from(correct);
            }
        }
    }

    Ok(GuideStats {
        segments,
        candidate_tracks,
        positive: GuideCounts {
            count: pg,
            fraction: ratio(pg, segments),
            accuracy: rate(pg_ok, pg),
            effective_count: eff,
            effective_fraction: ratio(eff, segments),
            effective_accuracy: rate(eff_ok, eff),
        },
        negative: GuideCounts {
            count: ng,
            fraction: ratio(ng, candidate_tracks),
            accuracy: rate(ng_ok, ng),
            effective_count: ng_eff,
            effective_fraction: ratio(ng_eff, candidate_tracks),
            effective_accuracy: rate(ng_eff_ok, ng_eff),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffscreenStats {
    pub segments: usize,
    pub offscreen: usize,
    pub offscreen_fraction: f64,
    pub falsely_assigned: usize,
    /// Share of off-screen segments given a track; absent without off-screen segments.
    pub false_assignment_rate: Option<f64>,
}

pub fn offscreen_error_rate(state: &AssignmentState, gt: &GroundTruth) -> OffscreenStats {
    let segments = gt.segment_track.len();
    let offscreen: Vec<&String> = gt
        .segment_track
        .iter()
        .filter(|(_, t)| t.is_none())
        .map(|(s, _)| s)
        .collect();
    let falsely = offscreen.iter().filter(|s| state.track_of(s).is_some()).count();
    OffscreenStats {
        segments,
        offscreen: offscreen.len(),
        offscreen_fraction: ratio(offscreen.len(), segments),
        falsely_assigned: falsely,
        false_assignment_rate: rate(falsely, offscreen.len()),
    }
}

/// Fraction of on-screen labeled segments assigned their true track.
pub fn assignment_accuracy(state: &AssignmentState, gt: &GroundTruth) -> Option<f64> {
    let on: Vec<(&String, &String)> = gt
        .segment_track
        .iter()
        .filter_map(|(s, t)| t.as_ref().map(|t| (s, t)))
        .collect();
    let ok = on.iter().filter(|(s, t)| state.track_of(s) == Some(t.as_str())).count();
    rate(ok, on.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub context_length: usize,
    pub scmia_map: f64,
    pub gscmia_map: Option<f64>,
}

/// Box-level mAP of both modes at each context length. The guided column is
/// filled only when the dataset carries activity scores.
pub fn context_sweep(
    dataset: &Dataset,
    context_lengths: &[usize],
    config: &Config,
    policy: UnscoredPolicy,
) -> Result<Vec<SweepRow>> {
    let gt = dataset
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::MissingGroundTruth("dataset".into()))?;
    let map_for = |mode: Mode, l: usize| -> Result<f64> {
        let cfg = Config {
            context_length: l,
            ..config.clone()
        };
        let result = associate(dataset, &cfg, mode, policy)?;
        let scores = assignment_box_scores(&result.state, &dataset.segments, &dataset.tracks);
        Ok(box_map(&scores.scores, &dataset.tracks, gt)?.mean_ap)
    };
    context_lengths
        .par_iter()
        .map(|&l| {
            Ok(SweepRow {
                context_length: l,
                scmia_map: map_for(Mode::Scmia, l)?,
                gscmia_map: match dataset.scores {
                    Some(_) => Some(map_for(Mode::Gscmia, l)?),
                    None => None,
                },
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("context_length,scmia_map,gscmia_map\n");
    for r in rows {
        let g = r.gscmia_map.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.context_length, r.scmia_map, g));
    }
    out
}
