//! Command-line interface.
//!
//! Every verb writes its outputs plus a `manifest.json` into `--out`. Reports
//! hold only results, so identical inputs give byte-identical reports; timing
//! lives in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::domain::{validate_dataset_with, Config, FaceTrack};
use crate::error::{Error, Result};
use crate::eval::{
    assignment_accuracy, box_map, context_sweep, cross_system_confusion, guide_stats, offscreen_error_rate,
    sweep_csv, threshold_predictions, weighted_f1,
};
use crate::fusion::{assignment_box_scores, late_fuse, soft_box_scores};
use crate::guidance::{build_guides, UnscoredPolicy};
use crate::ingest::{
    build_candidate_sets, read_assignments, read_box_scores, read_dataset, read_scores, read_tracks, write_dataset,
    write_json, write_jsonl, write_outputs, Dataset, DatasetPaths, GroundTruth, Outputs,
};
use crate::matrices::{build_fd, build_sd};
use crate::pipeline::{associate, AssociationResult, Mode};
use crate::synth::{generate, BetaParams, WorldSpec};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_INVALID_CONFIG: i32 = 4;
pub const EXIT_PARSE: i32 = 5;
pub const EXIT_INVALID_DATA: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "scmia", version, about = "Speech-face identity association for active speaker detection")]
pub struct Cli {
    /// Worker threads for partition and sweep parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Associate speech segments with face tracks.
    Run(RunArgs),
    /// Blend identity and activity box scores.
    Fuse(FuseArgs),
    /// Score box-level predictions against labels.
    Eval(EvalArgs),
    /// Compare unguided and guided runs on a labeled dataset.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Sweep context length, fusion weight or guide thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Scmia,
    Gscmia,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scmia => Mode::Scmia,
            ModeArg::Gscmia => Mode::Gscmia,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding segments.jsonl, tracks.jsonl and optionally
    /// av_scores.jsonl and ground_truth.jsonl.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Per-track activity scores.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(&self, explicit: &Option<PathBuf>, name: &str, required: bool) -> Result<Option<PathBuf>, CliError> {
        if let Some(p) = explicit {
            return Ok(Some(p.clone()));
        }
        let from_dir = self.data.as_ref().map(|d| d.join(name));
        match from_dir {
            Some(p) if required || p.exists() => Ok(Some(p)),
            None if required => Err(CliError::Usage(format!(
                "pass --data or --{}",
                name.trim_end_matches(".jsonl").replace('_', "-")
            ))),
            _ => Ok(None),
        }
    }

    fn paths(&self) -> Result<DatasetPaths, CliError> {
        Ok(DatasetPaths {
            segments: self.resolve(&self.segments, "segments.jsonl", true)?.unwrap(),
            tracks: self.resolve(&self.tracks, "tracks.jsonl", true)?.unwrap(),
            scores: self.resolve(&self.scores, "av_scores.jsonl", false)?,
            ground_truth: self.resolve(&self.ground_truth, "ground_truth.jsonl", false)?,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Segments per partition (default 500 unguided, 50 guided).
    #[arg(long)]
    pub context_length: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub tau_p: f64,
    #[arg(long, default_value_t = 0.2)]
    pub tau_n: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_segment_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub min_overlap_s: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub convergence_eps: f64,
    #[arg(long, default_value_t = 50)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, alias = "rng-seed", default_value_t = 0)]
    pub seed: u64,
    /// Treat tracks without activity scores as never guided instead of failing.
    #[arg(long)]
    pub allow_unscored: bool,
}

impl ConfigArgs {
    fn config(&self, mode: Mode) -> Config {
        let base = match mode {
            Mode::Scmia => Config::scmia(),
            Mode::Gscmia => Config::gscmia(),
        };
        Config {
            context_length: self.context_length.unwrap_or(base.context_length),
            tau_p: self.tau_p,
            tau_n: self.tau_n,
            alpha: self.alpha,
            max_segment_s: self.max_segment_s,
            min_overlap_s: self.min_overlap_s,
            convergence_eps: self.convergence_eps,
            max_sweeps: self.max_sweeps,
            restarts: self.restarts,
            rng_seed: self.seed,
        }
    }

    fn policy(&self) -> UnscoredPolicy {
        if self.allow_unscored {
            UnscoredPolicy::NeverGuide
        } else {
            UnscoredPolicy::Error
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value = "scmia")]
    pub mode: ModeArg,
    /// Emit graded identity box scores instead of binary ones.
    #[arg(long)]
    pub soft_scores: bool,
    /// Write each partition's similarity matrices as CSV.
    #[arg(long)]
    pub dump_matrices: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Identity-side box_scores.jsonl.
    #[arg(long)]
    pub identity: PathBuf,
    /// Activity-side box_scores.jsonl.
    #[arg(long, conflicts_with = "scores")]
    pub activity: Option<PathBuf>,
    /// Activity scores per track (av_scores.jsonl); needs --tracks.
    #[arg(long, requires = "tracks")]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// box_scores.jsonl of the system under test.
    #[arg(long)]
    pub box_scores: PathBuf,
    /// Second system's box_scores.jsonl for the cross-system confusion.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// assignments.jsonl for off-screen and assignment-accuracy figures.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// WorldSpec JSON used as the base; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub video_id: Option<String>,
    #[arg(long)]
    pub characters: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub min_visible: Option<usize>,
    #[arg(long)]
    pub max_visible: Option<usize>,
    #[arg(long)]
    pub offscreen_prob: Option<f64>,
    #[arg(long)]
    pub panel: bool,
    /// Do not open with one solo segment per character.
    #[arg(long)]
    pub no_solo: bool,
    /// Speaker activity Beta parameters as `a,b`.
    #[arg(long, value_parser = parse_beta)]
    pub speaker_beta: Option<BetaParams>,
    /// Non-speaker activity Beta parameters as `a,b`.
    #[arg(long, value_parser = parse_beta)]
    pub other_beta: Option<BetaParams>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_beta(s: &str) -> std::result::Result<BetaParams, String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok(BetaParams { alpha: p(a)?, beta: p(b)? })
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(subcommand)]
    pub kind: SweepKind,
}

#[derive(Debug, Subcommand)]
pub enum SweepKind {
    /// Box mAP of both modes per context length.
    Context {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![25usize, 50, 100, 200, 500])]
        lengths: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fused box mAP per fusion weight.
    Alpha {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "gscmia")]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
        alphas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Guided box mAP and guide sizes over a grid of thresholds.
    Thresholds {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.8, 0.9, 0.95])]
        tau_p_values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.2])]
        tau_n_values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_FILE,
                Error::InvalidConfig(_) | Error::InfeasibleSpec(_) => EXIT_INVALID_CONFIG,
                Error::Parse { .. } | Error::Json(_) => EXIT_PARSE,
                Error::InvalidDataset(_)
                | Error::InvalidEntity { .. }
                | Error::OverlappingRegions(..)
                | Error::DimensionMismatch { .. }
                | Error::UnknownTrack(_)
                | Error::UnscoredTrack(_)
                | Error::MissingGroundTruth(_)
                | Error::CoverageMismatch(_)
                | Error::NoPositives => EXIT_INVALID_DATA,
                _ => EXIT_FAILURE,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Provenance record written next to every output set.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub mode: String,
    pub config: Option<Config>,
    /// Input path to sha256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub wall_clock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(out: &Path, mode: &str, config: Option<&Config>, inputs: &[&Path], started: Instant) -> Result<()> {
    let mut digests = BTreeMap::new();
    for p in inputs {
        digests.insert(p.display().to_string(), sha256_file(p)?);
    }
    let manifest = RunManifest {
        mode: mode.into(),
        config: config.cloned(),
        inputs: digests,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn input_list(paths: &DatasetPaths) -> Vec<&Path> {
    let mut v = vec![paths.segments.as_path(), paths.tracks.as_path()];
    v.extend(paths.scores.as_deref());
    v.extend(paths.ground_truth.as_deref());
    v
}

fn load(data: &DataArgs, config: &Config) -> Result<(DatasetPaths, Dataset), CliError> {
    let paths = data.paths()?;
    let dataset = read_dataset(&paths)?;
    let problems =
        validate_dataset_with(&dataset.segments, &dataset.tracks, dataset.scores.as_ref(), config.max_segment_s);
    if !problems.is_empty() {
        return Err(Error::InvalidDataset(problems.iter().map(ToString::to_string).collect()).into());
    }
    Ok((paths, dataset))
}

fn need_gt(dataset: &Dataset) -> Result<&GroundTruth> {
    dataset
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::MissingGroundTruth("dataset (pass --ground-truth)".into()))
}

fn need_scores(dataset: &Dataset) -> Result<&crate::domain::ActivityScores> {
    dataset
        .scores
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("activity scores required (pass --scores)".into()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Labels-based summary of one association result.
fn assignment_summary(result: &AssociationResult, dataset: &Dataset) -> Result<Value> {
    let mut v = json!({
        "segments": dataset.segments.len(),
        "assigned": result.state.assignment.values().filter(|t| t.is_some()).count(),
        "pinned": result.state.pinned.len(),
        "dropped": result.dropped,
        "emptied": result.emptied,
        "skipped": result.skipped,
        "partitions": result.runs.len(),
        "final_objectives": result.runs.iter().map(|r| r.run.final_objective).collect::<Vec<_>>(),
    });
    if let Some(gt) = &dataset.ground_truth {
        let scores = assignment_box_scores(&result.state, &dataset.segments, &dataset.tracks);
        v["evaluation"] = json!({
            "box_map": box_map(&scores.scores, &dataset.tracks, gt)?,
            "assignment_accuracy": assignment_accuracy(&result.state, gt),
            "offscreen": offscreen_error_rate(&result.state, gt),
        });
    }
    Ok(v)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mode = Mode::from(args.mode);
    let config = args.config.config(mode);
    config.validate()?;
    let (paths, dataset) = load(&args.data, &config)?;
    let result = associate(&dataset, &config, mode, args.config.policy())?;

    let box_scores = if args.soft_scores {
        soft_box_scores(&result.candidate_scores(), &result.state, &dataset.segments, &dataset.tracks)
    } else {
        assignment_box_scores(&result.state, &dataset.segments, &dataset.tracks)
    };
    let mut report = assignment_summary(&result, &dataset)?;
    report["mode"] = json!(mode);
    write_outputs(
        &args.out,
        &Outputs {
            assignments: Some(&result.state),
            box_scores: Some(&box_scores.scores),
            reports: vec![("optimization_trace.json", result.objective_trace()), ("report.json", report.clone())],
        },
    )?;
    if let Some(g) = &result.guides {
        write_jsonl(&args.out.join("guides.jsonl"), g.records())?;
    }
    if args.dump_matrices {
        dump_matrices(&args.out.join("matrices"), &result, &dataset)?;
    }
    write_manifest(
        &args.out,
        match mode {
            Mode::Scmia => "scmia",
            Mode::Gscmia => "gscmia",
        },
        Some(&config),
        &input_list(&paths),
        started,
    )?;

    println!("mode       {}", report["mode"].as_str().unwrap_or_default());
    println!("segments   {}", report["segments"]);
    println!("assigned   {}", report["assigned"]);
    println!("partitions {}", report["partitions"]);
    if let Some(e) = report.get("evaluation") {
        println!("box mAP    {:.4}", e["box_map"]["mean_ap"].as_f64().unwrap_or(f64::NAN));
        println!("accuracy   {}", opt(e["assignment_accuracy"].as_f64()));
    }
    Ok(())
}

fn dump_matrices(dir: &Path, result: &AssociationResult, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let segs: BTreeMap<&str, _> = dataset.segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let tracks = dataset.track_map();
    for r in &result.runs {
        let sd = build_sd(&r.run.segment_ids.iter().map(|s| &segs[s.as_str()].embedding).collect::<Vec<_>>())?;
        let faces: Vec<_> = r
            .run
            .assignment
            .iter()
            .map(|t| tracks.get(t.as_str()).map(|t| &t.embedding))
            .collect();
        let fd = build_fd(&faces, &r.run.segment_ids)?;
        let stem = format!("{}_p{}", r.video_id, r.partition_index);
        for (name, m) in [("sd", &sd), ("fd", &fd)] {
            let path = dir.join(format!("{stem}_{name}.csv"));
            std::fs::write(&path, m.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn activity_box_scores(tracks: &[FaceTrack], scores_path: &Path) -> Result<BTreeMap<String, f64>> {
    Ok(read_scores(scores_path)?.box_scores(tracks))
}

fn cmd_fuse(args: &FuseArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let identity = read_box_scores(&args.identity)?;
    let mut inputs = vec![args.identity.as_path()];
    let activity = match (&args.activity, &args.scores, &args.tracks) {
        (Some(p), _, _) => {
            inputs.push(p);
            read_box_scores(p)?
        }
        (None, Some(s), Some(t)) => {
            inputs.extend([s.as_path(), t.as_path()]);
            activity_box_scores(&read_tracks(t)?, s)?
        }
        _ => return Err(CliError::Usage("pass --activity, or --scores with --tracks".into())),
    };
    let fused = late_fuse(&identity, &activity, args.alpha)?;
    let report = json!({
        "alpha": args.alpha,
        "fused_boxes": fused.set.scores.len(),
        "identity_only": fused.identity_only,
        "activity_only": fused.activity_only,
    });
    write_outputs(
        &args.out,
        &Outputs {
            box_scores: Some(&fused.set.scores),
            reports: vec![("report.json", report)],
            ..Outputs::default()
        },
    )?;
    let config = Config {
        alpha: args.alpha,
        ..Config::default()
    };
    write_manifest(&args.out, "fuse", Some(&config), &inputs, started)?;
    println!("fused boxes   {}", fused.set.scores.len());
    println!("identity only {}", fused.identity_only);
    println!("activity only {}", fused.activity_only);
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let scores = read_box_scores(&args.box_scores)?;
    let tracks = read_tracks(&args.tracks)?;
    let gt = crate::ingest::read_ground_truth(&args.ground_truth)?;
    let mut inputs = vec![args.box_scores.as_path(), args.tracks.as_path(), args.ground_truth.as_path()];

    let ap = box_map(&scores, &tracks, &gt)?;
    let (threshold, preds) = threshold_predictions(&scores, &gt.box_speaking)?;
    let f1 = (!gt.box_speaker.is_empty()).then(|| weighted_f1(&preds, &gt.box_speaking, &gt.box_speaker));
    let mut report = json!({
        "box_map": ap,
        "threshold": threshold,
        "weighted_f1": f1,
    });

    let mut confusion_csv = None;
    if let Some(other) = &args.compare {
        inputs.push(other);
        let b = read_box_scores(other)?;
        let (tb, preds_b) = threshold_predictions(&b, &gt.box_speaking)?;
        let c = cross_system_confusion(&preds, &preds_b, &gt.box_speaking)?;
        report["compare"] = json!({
            "box_map": box_map(&b, &tracks, &gt)?.mean_ap,
            "threshold": tb,
            "confusion": c,
        });
        let mut csv = String::from("class,both_correct,only_a_correct,only_b_correct,both_wrong\n");
        for (name, a) in [("positive", c.positive), ("negative", c.negative)] {
            csv.push_str(&format!(
                "{name},{},{},{},{}\n",
                a.both_correct, a.only_a_correct, a.only_b_correct, a.both_wrong
            ));
        }
        confusion_csv = Some(csv);
    }
    if let Some(p) = &args.assignments {
        inputs.push(p);
        let state = read_assignments(p)?;
        report["offscreen"] = json!(offscreen_error_rate(&state, &gt));
        report["assignment_accuracy"] = json!(assignment_accuracy(&state, &gt));
    }

    write_outputs(
        &args.out,
        &Outputs {
            reports: vec![("report.json", report.clone())],
            ..Outputs::default()
        },
    )?;
    let mut ap_csv = String::from("video_id,ap\n");
    for (v, a) in &ap.per_video {
        ap_csv.push_str(&format!("{v},{a}\n"));
    }
    write_text(&args.out.join("ap.csv"), &ap_csv)?;
    if let Some(f1) = &f1 {
        let mut csv = String::from("speaker_id,weighted_f1\n");
        for (s, v) in &f1.per_speaker {
            csv.push_str(&format!("{s},{v}\n"));
        }
        csv.push_str(&format!("avg,{}\n", f1.average));
        write_text(&args.out.join("weighted_f1.csv"), &csv)?;
    }
    if let Some(csv) = confusion_csv {
        write_text(&args.out.join("confusion.csv"), &csv)?;
    }
    write_manifest(&args.out, "eval", None, &inputs, started)?;

    println!("{:<24} {:>8}", "video", "AP");
    for (v, a) in &ap.per_video {
        println!("{v:<24} {a:>8.4}");
    }
    println!("{:<24} {:>8.4}", "mean", ap.mean_ap);
    if let Some(f1) = f1 {
        println!("weighted F1 avg {:.4}", f1.average);
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn predictions(scores: &BTreeMap<String, f64>, gt: &GroundTruth) -> Result<BTreeMap<String, bool>> {
    Ok(threshold_predictions(scores, &gt.box_speaking)?.1)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let unguided_cfg = args.config.config(Mode::Scmia);
    let guided_cfg = args.config.config(Mode::Gscmia);
    guided_cfg.validate()?;
    let (paths, dataset) = load(&args.data, &guided_cfg)?;
    let gt = need_gt(&dataset)?;
    let scores = need_scores(&dataset)?;
    let policy = args.config.policy();

    let unguided = associate(&dataset, &unguided_cfg, Mode::Scmia, policy)?;
    let guided = associate(&dataset, &guided_cfg, Mode::Gscmia, policy)?;
    let guides = guided.guides.clone().unwrap_or_default();
    let stats = guide_stats(&guides, &guided.candidates, &unguided.state, gt)?;

    let id_u = assignment_box_scores(&unguided.state, &dataset.segments, &dataset.tracks).scores;
    let id_g = assignment_box_scores(&guided.state, &dataset.segments, &dataset.tracks).scores;
    let activity = scores.box_scores(&dataset.tracks);
    let fused = late_fuse(&id_g, &activity, guided_cfg.alpha)?.set.scores;
    let map = |s: &BTreeMap<String, f64>| box_map(s, &dataset.tracks, gt).map(|r| r.mean_ap);

    let (pu, pg) = (predictions(&id_u, gt)?, predictions(&id_g, gt)?);
    let confusion = cross_system_confusion(&pu, &pg, &gt.box_speaking)?;
    let f1 = |p: &BTreeMap<String, bool>| weighted_f1(p, &gt.box_speaking, &gt.box_speaker);

    let report = json!({
        "box_map": {
            "scmia": map(&id_u)?,
            "gscmia": map(&id_g)?,
            "activity": map(&activity)?,
            "fused": map(&fused)?,
        },
        "assignment_accuracy": {
            "scmia": assignment_accuracy(&unguided.state, gt),
            "gscmia": assignment_accuracy(&guided.state, gt),
        },
        "weighted_f1": { "scmia": f1(&pu), "gscmia": f1(&pg) },
        "confusion_scmia_vs_gscmia": confusion,
        "guide_stats": stats,
        "offscreen": {
            "scmia": offscreen_error_rate(&unguided.state, gt),
            "gscmia": offscreen_error_rate(&guided.state, gt),
        },
    });
    write_outputs(
        &args.out,
        &Outputs {
            reports: vec![("report.json", report.clone())],
            ..Outputs::default()
        },
    )?;
    write_jsonl(&args.out.join("guides.jsonl"), guides.records())?;
    write_manifest(&args.out, "analyze", Some(&guided_cfg), &input_list(&paths), started)?;

    println!("{:<10} {:>8} {:>9}", "system", "box mAP", "accuracy");
    for name in ["scmia", "gscmia"] {
        println!(
            "{name:<10} {:>8.4} {:>9}",
            report["box_map"][name].as_f64().unwrap_or(f64::NAN),
            opt(report["assignment_accuracy"][name].as_f64())
        );
    }
    println!("{:<10} {:>8.4}", "activity", report["box_map"]["activity"].as_f64().unwrap_or(f64::NAN));
    println!("{:<10} {:>8.4}", "fused", report["box_map"]["fused"].as_f64().unwrap_or(f64::NAN));
    println!(
        "PG fraction {:.4} accuracy {}  NG fraction {:.4} accuracy {}",
        stats.positive.fraction,
        opt(stats.positive.accuracy),
        stats.negative.fraction,
        opt(stats.negative.accuracy)
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => WorldSpec::default(),
    };
    if let Some(v) = &args.video_id {
        spec.video_id = v.clone();
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = args.$flag { spec.$field = v; })* };
    }
    set!(characters => num_characters, embed_dim => embed_dim, sigma => noise_sigma,
         segments => num_segments, offscreen_prob => offscreen_prob, seed => seed,
         speaker_beta => speaker_score, other_beta => other_score);
    if let Some(v) = args.min_visible {
        spec.visible_tracks_per_segment.0 = v;
    }
    if let Some(v) = args.max_visible {
        spec.visible_tracks_per_segment.1 = v;
    }
    spec.panel_mode |= args.panel;
    spec.solo_segments &= !args.no_solo;

    let world = generate(&spec)?;
    write_dataset(&args.out, &world.dataset)?;
    write_json(&args.out.join("spec.json"), &spec)?;
    let inputs: Vec<&Path> = args.spec.iter().map(PathBuf::as_path).collect();
    write_manifest(&args.out, "synth", None, &inputs, started)?;
    println!("segments {}", world.dataset.segments.len());
    println!("tracks   {}", world.dataset.tracks.len());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    match &args.kind {
        SweepKind::Context {
            data,
            config,
            lengths,
            out,
        } => {
            let cfg = config.config(Mode::Scmia);
            let (paths, dataset) = load(data, &cfg)?;
            let rows = context_sweep(&dataset, lengths, &cfg, config.policy())?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let csv = sweep_csv(&rows);
            write_text(&out.join("sweep.csv"), &csv)?;
            write_json(&out.join("report.json"), &json!({ "context_sweep": rows }))?;
            write_manifest(out, "sweep", Some(&cfg), &input_list(&paths), started)?;
            print!("{csv}");
        }
        SweepKind::Alpha {
            data,
            config,
            mode,
            alphas,
            out,
        } => {
            let mode = Mode::from(*mode);
            let cfg = config.config(mode);
            let (paths, dataset) = load(data, &cfg)?;
            let gt = need_gt(&dataset)?;
            let activity = need_scores(&dataset)?.box_scores(&dataset.tracks);
            let result = associate(&dataset, &cfg, mode, config.policy())?;
            let identity = assignment_box_scores(&result.state, &dataset.segments, &dataset.tracks).scores;
            let mut rows = Vec::new();
            let mut csv = String::from("alpha,fused_map\n");
            for &a in alphas {
                let fused = late_fuse(&identity, &activity, a)?.set.scores;
                let m = box_map(&fused, &dataset.tracks, gt)?.mean_ap;
                csv.push_str(&format!("{a},{m}\n"));
                rows.push(json!({ "alpha": a, "fused_map": m }));
            }
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_text(&out.join("sweep.csv"), &csv)?;
            write_json(&out.join("report.json"), &json!({ "mode": mode, "alpha_sweep": rows }))?;
            write_manifest(out, "sweep", Some(&cfg), &input_list(&paths), started)?;
            print!("{csv}");
        }
        SweepKind::Thresholds {
            data,
            config,
            tau_p_values,
            tau_n_values,
            out,
        } => {
            let base = config.config(Mode::Gscmia);
            let (paths, dataset) = load(data, &base)?;
            let gt = need_gt(&dataset)?;
            let scores = need_scores(&dataset)?;
            let (candidates, _) = build_candidate_sets(&dataset.segments, &dataset.tracks, base.min_overlap_s);
            let mut rows = Vec::new();
            let mut csv = String::from("tau_p,tau_n,pg_fraction,ng_fraction,gscmia_map\n");
            for &tp in tau_p_values {
                for &tn in tau_n_values {
                    let cfg = Config {
                        tau_p: tp,
                        tau_n: tn,
                        ..base.clone()
                    };
                    if cfg.validate().is_err() {
                        continue;
                    }
                    let (guides, _) = build_guides(&candidates, scores, tp, tn, config.policy())?;
                    let pg = guides.positive.len() as f64 / candidates.len().max(1) as f64;
                    let total: usize = candidates.iter().map(|c| c.len()).sum();
                    let ng = guides.removed_count() as f64 / total.max(1) as f64;
                    let result = associate(&dataset, &cfg, Mode::Gscmia, config.policy())?;
                    let ids = assignment_box_scores(&result.state, &dataset.segments, &dataset.tracks).scores;
                    let m = box_map(&ids, &dataset.tracks, gt)?.mean_ap;
                    csv.push_str(&format!("{tp},{tn},{pg},{ng},{m}\n"));
                    rows.push(json!({ "tau_p": tp, "tau_n": tn, "pg_fraction": pg, "ng_fraction": ng, "gscmia_map": m }));
                }
            }
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_text(&out.join("sweep.csv"), &csv)?;
            write_json(&out.join("report.json"), &json!({ "threshold_sweep": rows }))?;
            write_manifest(out, "sweep", Some(&base), &input_list(&paths), started)?;
            print!("{csv}");
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Parses the process arguments, runs the verb and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
