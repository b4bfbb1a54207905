//! End-to-end association behaviour across videos, guides and sweeps.

use scmia::eval::{box_map, context_sweep};
use scmia::fusion::{assignment_box_scores, soft_box_scores};
use scmia::guidance::UnscoredPolicy;
use scmia::ingest::Dataset;
use scmia::synth::{generate, WorldSpec};
use scmia::{associate, ActivityScores, Config, Embedding, FaceBox, FaceTrack, Mode, SpeechSegment};

fn two_videos() -> Dataset {
    let mut out = Dataset::default();
    for (k, video) in ["va", "vb"].iter().enumerate() {
        let w = generate(&WorldSpec {
            video_id: video.to_string(),
            num_segments: 40,
            noise_sigma: 0.2,
            offscreen_prob: 0.1,
            seed: k as u64,
            ..WorldSpec::default()
        })
        .unwrap();
        let prefix = |s: &str| format!("{video}_{s}");
        let gt = w.dataset.ground_truth.unwrap();
        let gt_out = out.ground_truth.get_or_insert_with(Default::default);
        for s in w.dataset.segments {
            out.segments
                .push(SpeechSegment::new(prefix(&s.id), *video, s.start_s, s.end_s, s.embedding).unwrap());
        }
        for t in w.dataset.tracks {
            let boxes = t
                .boxes()
                .iter()
                .map(|b| FaceBox::new(prefix(&b.box_id), b.timestamp_s, b.x1, b.y1, b.x2, b.y2).unwrap())
                .collect();
            out.tracks
                .push(FaceTrack::new(prefix(&t.id), *video, boxes, t.embedding.clone()).unwrap());
        }
        let scores = out.scores.get_or_insert_with(ActivityScores::default);
        for (t, v) in w.dataset.scores.unwrap().per_track {
            scores.per_track.insert(prefix(&t), v);
        }
        for (b, s) in gt.box_speaking {
            gt_out.box_speaking.insert(prefix(&b), s);
        }
        for (b, s) in gt.box_speaker {
            gt_out.box_speaker.insert(prefix(&b), format!("{video}_{s}"));
        }
        for (s, t) in gt.segment_track {
            gt_out.segment_track.insert(prefix(&s), t.map(|t| prefix(&t)));
        }
    }
    out
}

#[test]
fn videos_are_optimized_separately_and_cover_every_segment() {
    let ds = two_videos();
    let r = associate(&ds, &Config::scmia(), Mode::Scmia, UnscoredPolicy::Error).unwrap();
    assert_eq!(r.state.assignment.len(), ds.segments.len());
    let videos: Vec<&str> = r.runs.iter().map(|v| v.video_id.as_str()).collect();
    assert_eq!(videos, vec!["va", "vb"]);
    for run in &r.runs {
        assert!(run.run.segment_ids.iter().all(|s| s.starts_with(&run.video_id)));
        assert!(run.run.assignment.iter().all(|t| t.starts_with(&run.video_id)));
    }
    let covered: usize = r.runs.iter().map(|v| v.run.segment_ids.len()).sum();
    assert_eq!(covered + r.dropped.len() + r.skipped.len(), ds.segments.len());
    assert!(r.dropped.iter().all(|s| r.state.track_of(s).is_none()));
}

#[test]
fn partitions_follow_time_order() {
    let ds = two_videos();
    let cfg = Config {
        context_length: 7,
        ..Config::scmia()
    };
    let r = associate(&ds, &cfg, Mode::Scmia, UnscoredPolicy::Error).unwrap();
    let start = |id: &str| ds.segments.iter().find(|s| s.id == id).unwrap().start_s;
    for v in ["va", "vb"] {
        let order: Vec<f64> = r
            .runs
            .iter()
            .filter(|x| x.video_id == v)
            .flat_map(|x| x.run.segment_ids.iter().map(|s| start(s)))
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(r.runs.iter().filter(|x| x.video_id == v).all(|x| x.run.segment_ids.len() >= 2));
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let ds = two_videos();
    let cfg = Config {
        context_length: 10,
        restarts: 2,
        rng_seed: 9,
        ..Config::gscmia()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| associate(&ds, &cfg, Mode::Gscmia, UnscoredPolicy::Error).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.state, b.state);
    assert_eq!(a.objective_trace(), b.objective_trace());
}

#[test]
fn guided_mode_requires_scores_unless_opted_out() {
    let mut ds = two_videos();
    let dropped = ds.tracks[0].id.clone();
    ds.scores.as_mut().unwrap().per_track.remove(&dropped);
    let err = associate(&ds, &Config::gscmia(), Mode::Gscmia, UnscoredPolicy::Error).unwrap_err();
    assert!(matches!(err, scmia::Error::UnscoredTrack(t) if t == dropped));
    let r = associate(&ds, &Config::gscmia(), Mode::Gscmia, UnscoredPolicy::NeverGuide).unwrap();
    let g = r.guides.unwrap();
    assert!(g.positive.values().all(|t| *t != dropped));
    assert!(g.negative.values().all(|s| !s.contains(&dropped)));

    ds.scores = None;
    assert!(associate(&ds, &Config::gscmia(), Mode::Gscmia, UnscoredPolicy::Error).is_err());
}

fn emb(v: &[f64]) -> Embedding {
    Embedding::new(v.to_vec()).unwrap()
}

fn track(id: &str, video: &str, t: f64, v: &[f64]) -> FaceTrack {
    let boxes = vec![
        FaceBox::new(format!("{id}_0"), t + 0.1, 0.0, 0.0, 1.0, 1.0).unwrap(),
        FaceBox::new(format!("{id}_1"), t + 0.9, 0.0, 0.0, 1.0, 1.0).unwrap(),
    ];
    FaceTrack::new(id, video, boxes, emb(v)).unwrap()
}

#[test]
fn lone_segment_in_a_video_is_skipped_but_keeps_its_pin() {
    let ds = Dataset {
        segments: vec![
            SpeechSegment::new("a1", "a", 0.0, 1.0, emb(&[1.0, 0.0])).unwrap(),
            SpeechSegment::new("a2", "a", 1.0, 2.0, emb(&[0.0, 1.0])).unwrap(),
            SpeechSegment::new("b1", "b", 0.0, 1.0, emb(&[1.0, 0.0])).unwrap(),
            SpeechSegment::new("c1", "c", 0.0, 1.0, emb(&[1.0, 0.0])).unwrap(),
        ],
        tracks: vec![
            track("ta1", "a", 0.0, &[1.0, 0.0]),
            track("ta2", "a", 1.0, &[0.0, 1.0]),
            track("tb1", "b", 0.0, &[1.0, 0.1]),
            track("tc1", "c", 0.0, &[1.0, 0.1]),
        ],
        scores: Some(ActivityScores {
            per_track: [
                ("ta1".to_string(), vec![0.5, 0.5]),
                ("ta2".to_string(), vec![0.5, 0.5]),
                ("tb1".to_string(), vec![0.95, 0.97]),
                ("tc1".to_string(), vec![0.5, 0.5]),
            ]
            .into(),
        }),
        ground_truth: None,
    };
    let r = associate(&ds, &Config::gscmia(), Mode::Gscmia, UnscoredPolicy::Error).unwrap();
    assert_eq!(r.skipped, vec!["b1", "c1"]);
    assert_eq!(r.state.track_of("b1"), Some("tb1"));
    assert!(r.state.is_pinned("b1"));
    assert_eq!(r.state.track_of("c1"), None);
    assert_eq!(r.state.track_of("a1"), Some("ta1"));
}

#[test]
fn offscreen_segments_can_be_emptied_by_negative_guides() {
    let w = generate(&WorldSpec {
        num_segments: 80,
        offscreen_prob: 0.5,
        seed: 2,
        ..WorldSpec::default()
    })
    .unwrap();
    let r = associate(&w.dataset, &Config::gscmia(), Mode::Gscmia, UnscoredPolicy::Error).unwrap();
    assert!(!r.emptied.is_empty());
    assert!(r.emptied.iter().all(|s| r.state.track_of(s).is_none()));
}

#[test]
fn context_sweep_single_length_matches_direct_run() {
    let w = generate(&WorldSpec {
        num_segments: 60,
        noise_sigma: 0.3,
        seed: 8,
        ..WorldSpec::default()
    })
    .unwrap();
    let cfg = Config {
        context_length: 20,
        ..Config::default()
    };
    let rows = context_sweep(&w.dataset, &[20], &cfg, UnscoredPolicy::Error).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = associate(&w.dataset, &cfg, Mode::Scmia, UnscoredPolicy::Error).unwrap();
    let scores = assignment_box_scores(&direct.state, &w.dataset.segments, &w.dataset.tracks);
    let m = box_map(&scores.scores, &w.dataset.tracks, w.ground_truth()).unwrap().mean_ap;
    assert_eq!(rows[0].scmia_map, m);
}

#[test]
fn fully_pinned_sweep_is_flat() {
    // Every speaker scores 1.0 so every segment is pinned.
    let mut w = generate(&WorldSpec {
        num_segments: 60,
        noise_sigma: 0.3,
        seed: 8,
        ..WorldSpec::default()
    })
    .unwrap();
    let gt = w.dataset.ground_truth.clone().unwrap();
    let speakers: std::collections::BTreeSet<String> = gt.segment_track.values().flatten().cloned().collect();
    for (t, v) in w.dataset.scores.as_mut().unwrap().per_track.iter_mut() {
        let s = if speakers.contains(t) { 1.0 } else { 0.0 };
        v.iter_mut().for_each(|x| *x = s);
    }
    let rows = context_sweep(&w.dataset, &[5, 20, 60], &Config::default(), UnscoredPolicy::Error).unwrap();
    let g: Vec<f64> = rows.iter().map(|r| r.gscmia_map.unwrap()).collect();
    assert!(g.windows(2).all(|p| p[0] == p[1]), "{g:?}");
}

#[test]
fn soft_scores_lie_in_unit_interval_and_rank_assigned_boxes() {
    let w = generate(&WorldSpec {
        num_segments: 40,
        noise_sigma: 0.2,
        seed: 3,
        ..WorldSpec::default()
    })
    .unwrap();
    let r = associate(&w.dataset, &Config::scmia(), Mode::Scmia, UnscoredPolicy::Error).unwrap();
    let soft = soft_box_scores(&r.candidate_scores(), &r.state, &w.dataset.segments, &w.dataset.tracks);
    assert!(soft.scores.values().all(|v| (0.0..=1.0).contains(v)));
    let hard = assignment_box_scores(&r.state, &w.dataset.segments, &w.dataset.tracks);
    assert_eq!(soft.scores.len(), hard.scores.len());
}
