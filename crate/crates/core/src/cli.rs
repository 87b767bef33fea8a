//! The `evs` command line: `run`, `flow`, `synth` and `bench`.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 internal.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::disflow::{estimate_flow, fast_preset, DisParams};
use crate::error::Error;
use crate::evaluation::{timed_probe, ConfusionMatrix, HopSummary, InconsistencyStats, TimingReport, METRICS_SCHEMA_VERSION};
use crate::iam::{compute_backforward_labels, dilate_and_smooth, inconsistency_mask, IamParams, RoundTrip};
use crate::imagery::{
    load_frame_sequence, read_flo, read_frame, read_label_png, write_flo, write_frame, write_label_png, write_mask_png,
    Frame, FramePattern, LabelMap,
};
use crate::pipeline::{
    builtin_operating_points, operating_point, process_stream_with, Anchor, FlowResolution, FrameOutput,
    OperatingPoint, PipelineConfig, StageTimings,
};
use crate::propagation::{mapping_from_flow, remap_labels, TileGrid};
use crate::segmentation::{
    DirectoryGroundTruth, Downscale, OracleRefiner, PassthroughRefiner, PrecomputedSegmenter, RefinerBackend,
    SegmenterBackend, PALETTE_FEATURE_CHANNELS,
};
use crate::synthgen::{
    crossing_scene, generate, occlusion_suite, propagation_suite, smooth_motion_suite, translation_scene,
    translation_suite, SceneSpec, FRAME_PATTERN, LABEL_PATTERN,
};

#[derive(Debug, Parser)]
#[command(name = "evs", version, about = "Keyframe segmentation with optical-flow propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a frame directory under an operating point.
    Run(RunArgs),
    /// Estimate flow between consecutive frames and write `.flo` files.
    Flow(FlowArgs),
    /// Render a synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Time a stage and write a JSON report.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Default)]
struct RunArgs {
    /// JSON file with run settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of input frames.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Frame file pattern.
    #[arg(long)]
    pattern: Option<String>,
    /// Segmenter: `palette:SCENE.json` or `precomputed:DIR`.
    #[arg(long)]
    seg: Option<String>,
    /// Refiner: `oracle`, `passthrough` or `none`.
    #[arg(long)]
    refiner: Option<String>,
    /// Ground-truth label directory.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    gt_pattern: Option<String>,
    /// Named operating point, e.g. EVS-06.
    #[arg(long)]
    op: Option<String>,
    /// Override D (0.5 or 1.0).
    #[arg(long)]
    downscale: Option<f64>,
    /// Override S.
    #[arg(long)]
    period: Option<usize>,
    /// Override W.
    #[arg(long)]
    warping: Option<bool>,
    /// Override R.
    #[arg(long)]
    refinement: Option<bool>,
    /// `full` or WIDTHxHEIGHT.
    #[arg(long)]
    flow_res: Option<String>,
    /// Inconsistency working size, WIDTHxHEIGHT.
    #[arg(long)]
    iam_size: Option<String>,
    /// Round trip checked by the inconsistency mask.
    #[arg(long, value_enum)]
    round_trip: Option<RoundTripArg>,
    /// Mask dilation radius in working-size pixels.
    #[arg(long)]
    dilation_radius: Option<usize>,
    /// Mask smoothing sigma in working-size pixels.
    #[arg(long)]
    smoothing_sigma: Option<f64>,
    /// FRAME:HOPS, placing frame FRAME that many hops after a keyframe.
    #[arg(long)]
    anchor: Option<String>,
    /// Remap tile grid, ROWSxCOLS.
    #[arg(long)]
    tiles: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_labels: bool,
    #[arg(long)]
    overlays: bool,
    #[arg(long)]
    masks: bool,
    #[arg(long)]
    no_metrics: bool,
    #[arg(long)]
    no_timings: bool,
}

/// Settings accepted by `evs run --config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub input: Option<PathBuf>,
    pub pattern: Option<String>,
    pub seg: Option<String>,
    pub refiner: Option<String>,
    pub gt: Option<PathBuf>,
    pub gt_pattern: Option<String>,
    pub op: Option<String>,
    pub downscale: Option<f64>,
    pub period: Option<usize>,
    pub warping: Option<bool>,
    pub refinement: Option<bool>,
    pub flow_res: Option<String>,
    pub iam_size: Option<String>,
    pub round_trip: Option<RoundTrip>,
    pub dilation_radius: Option<usize>,
    pub smoothing_sigma: Option<f64>,
    pub anchor: Option<String>,
    pub tiles: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub export: ExportToggles,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportToggles {
    pub labels: bool,
    pub overlays: bool,
    pub masks: bool,
    pub metrics: bool,
    pub timings: bool,
}

impl Default for ExportToggles {
    fn default() -> Self {
        Self {
            labels: true,
            overlays: false,
            masks: false,
            metrics: true,
            timings: true,
        }
    }
}

#[derive(Debug, Args)]
struct FlowArgs {
    /// Directory of frames.
    #[arg(long = "in", conflicts_with = "pair")]
    input: Option<PathBuf>,
    #[arg(long, default_value = FRAME_PATTERN)]
    pattern: String,
    /// Two frame files instead of a directory.
    #[arg(long, num_args = 2, value_names = ["PREV", "NEXT"])]
    pair: Option<Vec<PathBuf>>,
    #[arg(long, value_enum, default_value_t = Preset::Fast)]
    preset: Preset,
    /// Directory of ground-truth `flow_%06d.flo` files for an error report.
    #[arg(long)]
    gt_flow: Option<PathBuf>,
    /// Border excluded from the endpoint error, in pixels.
    #[arg(long, default_value_t = 8)]
    margin: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RoundTripArg {
    BackwardForward,
    ForwardBackward,
    Both,
}

impl From<RoundTripArg> for RoundTrip {
    fn from(r: RoundTripArg) -> Self {
        match r {
            RoundTripArg::BackwardForward => RoundTrip::BackwardForward,
            RoundTripArg::ForwardBackward => RoundTrip::ForwardBackward,
            RoundTripArg::Both => RoundTrip::Both,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Fast,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene JSON file.
    #[arg(long, required_unless_present = "suite", conflicts_with = "suite")]
    spec: Option<PathBuf>,
    /// A canned suite, written one sequence per subdirectory.
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    /// Seed of the propagation suite.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Crossing,
    Translation,
    Smooth,
    Occlusion,
    Propagation,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(value_enum)]
    stage: Stage,
    /// Frame size, WIDTHxHEIGHT.
    #[arg(long, default_value = "2048x1024")]
    size: String,
    /// Retained samples.
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Runs discarded before the retained samples.
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    #[arg(long, value_enum, default_value_t = Preset::Fast)]
    preset: Preset,
    #[arg(long)]
    workers: Option<usize>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Stage {
    Flow,
    Remap,
    Iam,
    Pipeline,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownOperatingPoint { .. } => CliError::Usage(e.to_string()),
            e => CliError::Data(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Flow(a) => cmd_flow(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(Ok(())) => 0,
        Ok(Err(CliError::Usage(m))) => {
            eprintln!("error: {m}");
            1
        }
        Ok(Err(CliError::Data(e))) => {
            eprintln!("error: {e}");
            2
        }
        Err(_) => {
            eprintln!("error: internal failure");
            3
        }
    }
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("expected WIDTHxHEIGHT, got {s:?}")))?;
    let w: usize = w.trim().parse().map_err(|_| usage(format!("bad width in {s:?}")))?;
    let h: usize = h.trim().parse().map_err(|_| usage(format!("bad height in {s:?}")))?;
    if w == 0 || h == 0 {
        return Err(usage(format!("size {s:?} must be positive")));
    }
    Ok((w, h))
}

fn parse_anchor(s: &str) -> CliResult<Anchor> {
    let (f, h) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("expected FRAME:HOPS, got {s:?}")))?;
    Ok(Anchor {
        frame: f.trim().parse().map_err(|_| usage(format!("bad anchor frame in {s:?}")))?,
        hops: h.trim().parse().map_err(|_| usage(format!("bad anchor hops in {s:?}")))?,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    fs::write(path, text).map_err(|e| Error::file(path, e.to_string()))?;
    Ok(())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e.to_string()))?;
    Ok(())
}

/// Fully resolved `run` settings.
struct RunPlan {
    input: PathBuf,
    pattern: String,
    seg: String,
    refiner: Option<String>,
    gt: Option<PathBuf>,
    gt_pattern: String,
    out: PathBuf,
    export: ExportToggles,
    pipeline: PipelineConfig,
}

fn resolve_run(a: RunArgs) -> CliResult<RunPlan> {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::file(p, e.to_string()))?;
            serde_json::from_str::<RunConfigFile>(&text).map_err(|e| Error::file(p, e.to_string()))?
        }
        None => RunConfigFile::default(),
    };
    let input = a.input.or(file.input).ok_or_else(|| usage("--in is required"))?;
    let seg = a.seg.or(file.seg).ok_or_else(|| usage("--seg is required"))?;
    let out = a.out.or(file.out).ok_or_else(|| usage("--out is required"))?;
    let mut op = operating_point(a.op.or(file.op).as_deref().unwrap_or("EVS-06"))?;
    if let Some(d) = a.downscale.or(file.downscale) {
        op.downscale = Downscale::try_from(d).map_err(usage)?;
        op.name = "custom".into();
    }
    if let Some(s) = a.period.or(file.period) {
        op.segmentation_period = s;
        op.name = "custom".into();
    }
    if let Some(w) = a.warping.or(file.warping) {
        op.warping = w;
        op.name = "custom".into();
    }
    if let Some(r) = a.refinement.or(file.refinement) {
        op.refinement = r;
        op.name = "custom".into();
    }
    op.validate().map_err(|e| usage(e.to_string()))?;
    let refiner = match a.refiner.or(file.refiner).as_deref() {
        None | Some("none") => None,
        Some(r @ ("oracle" | "passthrough")) => Some(r.to_string()),
        Some(other) => return Err(usage(format!("unknown refiner {other:?}; expected oracle, passthrough or none"))),
    };
    if op.refinement && refiner.is_none() {
        return Err(usage(format!("operating point {} needs --refiner", op.name)));
    }
    let mut pipeline = PipelineConfig::new(op);
    if let Some(f) = a.flow_res.or(file.flow_res) {
        pipeline.flow_resolution = if f == "full" {
            FlowResolution::Full
        } else {
            let (width, height) = parse_size(&f)?;
            FlowResolution::Fixed { width, height }
        };
    }
    if let Some(s) = a.iam_size.or(file.iam_size) {
        let (w, h) = parse_size(&s)?;
        pipeline.iam.working_width = w;
        pipeline.iam.working_height = h;
    }
    if let Some(r) = a.round_trip.map(RoundTrip::from).or(file.round_trip) {
        pipeline.iam.round_trip = r;
    }
    if let Some(r) = a.dilation_radius.or(file.dilation_radius) {
        pipeline.iam.dilation_radius = r;
    }
    if let Some(s) = a.smoothing_sigma.or(file.smoothing_sigma) {
        pipeline.iam.smoothing_sigma = s;
    }
    if let Some(s) = a.anchor.or(file.anchor) {
        pipeline.anchor = Some(parse_anchor(&s)?);
    }
    if let Some(s) = a.tiles.or(file.tiles) {
        let (rows, cols) = parse_size(&s)?;
        pipeline.tiles = TileGrid::new(rows, cols)?;
    }
    pipeline.workers = a.workers.or(file.workers).unwrap_or(0);
    pipeline.validate().map_err(|e| usage(e.to_string()))?;
    let mut export = file.export;
    export.labels &= !a.no_labels;
    export.overlays |= a.overlays;
    export.masks |= a.masks;
    export.metrics &= !a.no_metrics;
    export.timings &= !a.no_timings;
    let gt = a.gt.or(file.gt);
    if refiner.as_deref() == Some("oracle") && gt.is_none() {
        return Err(usage("the oracle refiner needs --gt"));
    }
    Ok(RunPlan {
        input,
        pattern: a.pattern.or(file.pattern).unwrap_or_else(|| FRAME_PATTERN.to_string()),
        seg,
        refiner,
        gt,
        gt_pattern: a.gt_pattern.or(file.gt_pattern).unwrap_or_else(|| LABEL_PATTERN.to_string()),
        out,
        export,
        pipeline,
    })
}

/// Segmenter selected on the command line, plus overlay colours.
fn open_segmenter(selector: &str, frame_size: (usize, usize)) -> CliResult<(Box<dyn SegmenterBackend>, Vec<[u8; 3]>)> {
    let (kind, arg) = selector
        .split_once(':')
        .ok_or_else(|| usage(format!("expected palette:SCENE.json or precomputed:DIR, got {selector:?}")))?;
    match kind {
        "palette" => {
            let spec = SceneSpec::load(arg)?;
            let seg = spec
                .palette_segmenter()?
                .with_prediction_size(frame_size.0, frame_size.1)
                .with_feature_size((frame_size.0 / 4).max(1), (frame_size.1 / 4).max(1));
            let mut colors = vec![[0, 0, 0]; seg.num_classes()];
            for e in seg.palette() {
                colors[e.class_id as usize] = e.color;
            }
            Ok((Box::new(seg), colors))
        }
        "precomputed" => {
            let seg = PrecomputedSegmenter::open(arg)?.with_fallback_features(128, 64, PALETTE_FEATURE_CHANNELS);
            let colors = (0..seg.num_classes()).map(class_color).collect();
            Ok((Box::new(seg), colors))
        }
        other => Err(usage(format!("unknown segmenter {other:?}; expected palette or precomputed"))),
    }
}

/// Cityscapes colours for the first 19 ids, hashed colours beyond.
fn class_color(id: usize) -> [u8; 3] {
    const CITYSCAPES: [[u8; 3]; 19] = [
        [128, 64, 128],
        [244, 35, 232],
        [70, 70, 70],
        [102, 102, 156],
        [190, 153, 153],
        [153, 153, 153],
        [250, 170, 30],
        [220, 220, 0],
        [107, 142, 35],
        [152, 251, 152],
        [70, 130, 180],
        [220, 20, 60],
        [255, 0, 0],
        [0, 0, 142],
        [0, 0, 70],
        [0, 60, 100],
        [0, 80, 100],
        [0, 0, 230],
        [119, 11, 32],
    ];
    CITYSCAPES.get(id).copied().unwrap_or_else(|| {
        let h = (id as u32).wrapping_mul(2_654_435_761);
        [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
    })
}

fn overlay(frame: &Frame, labels: &LabelMap, colors: &[[u8; 3]]) -> crate::Result<Frame> {
    let labels = labels.resize_nearest(frame.width(), frame.height())?;
    Frame::from_fn(frame.width(), frame.height(), frame.index(), |x, y| {
        let c = colors.get(labels.get(x, y) as usize).copied().unwrap_or([0, 0, 0]);
        let p = frame.pixel(x, y);
        [0, 1, 2].map(|i| (p[i] as u16 + c[i] as u16).div_ceil(2) as u8)
    })
}

#[derive(Serialize)]
struct HopScore {
    hop: usize,
    frames: usize,
    mean_iou: Option<f64>,
}

#[derive(Serialize)]
struct AnchorScore {
    frame: u64,
    hops: usize,
    mean_iou: Option<f64>,
}

#[derive(Serialize)]
struct MetricsReport {
    schema_version: u32,
    operating_point: OperatingPoint,
    frames: usize,
    frames_scored: usize,
    mean_iou: Option<f64>,
    pixel_accuracy: Option<f64>,
    per_class_iou: Vec<Option<f64>>,
    per_hop: Vec<HopScore>,
    anchor: Option<AnchorScore>,
    inconsistency: Vec<HopSummary>,
}

#[derive(Serialize)]
struct FrameTiming {
    frame_index: u64,
    position: usize,
    is_keyframe: bool,
    hops: usize,
    timings: StageTimings,
}

#[derive(Serialize)]
struct TimingsReport {
    schema_version: u32,
    frames: Vec<FrameTiming>,
    stages: Vec<TimingReport>,
}

fn stage_reports(frames: &[FrameTiming]) -> Vec<TimingReport> {
    let stages: [(&str, fn(&StageTimings) -> Option<f64>); 5] = [
        ("segmentation", |t| t.segmentation_ms),
        ("flow", |t| t.flow_ms),
        ("warp", |t| t.warp_ms),
        ("iam", |t| t.iam_ms),
        ("refine", |t| t.refine_ms),
    ];
    stages
        .iter()
        .filter_map(|(name, get)| {
            let v: Vec<f64> = frames.iter().filter_map(|f| get(&f.timings)).collect();
            TimingReport::from_samples(*name, &v, 0).ok()
        })
        .collect()
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let plan = resolve_run(a)?;
    let frames = load_frame_sequence(&plan.input, &plan.pattern)?;
    let (segmenter, colors) = open_segmenter(&plan.seg, frames[0].size())?;
    let num_classes = segmenter.num_classes();
    let ignore = segmenter.ignore_id();
    let refiner: Option<Box<dyn RefinerBackend>> = match plan.refiner.as_deref() {
        Some("oracle") => {
            let dir = plan.gt.clone().expect("checked while resolving");
            Some(Box::new(OracleRefiner::new(DirectoryGroundTruth::new(dir, &plan.gt_pattern, num_classes, ignore)?)))
        }
        Some(_) => Some(Box::new(PassthroughRefiner)),
        None => None,
    };
    let refiner = if plan.pipeline.operating_point.refinement { refiner } else { None };

    let out = &plan.out;
    create_dir(out)?;
    for (on, sub) in [(plan.export.labels, "labels"), (plan.export.overlays, "overlays"), (plan.export.masks, "masks")] {
        if on {
            create_dir(&out.join(sub))?;
        }
    }
    let gt_pattern = FramePattern::parse(&plan.gt_pattern).map_err(|e| usage(e.to_string()))?;

    let mut total = ConfusionMatrix::new(num_classes, ignore)?;
    let mut per_hop: Vec<(usize, ConfusionMatrix)> = Vec::new();
    let mut anchor_matrix: Option<ConfusionMatrix> = None;
    let mut scored = 0usize;
    let mut stats = InconsistencyStats::default();
    let mut timings = Vec::new();
    let by_position: Vec<&Frame> = frames.iter().collect();

    let mut sink = |o: FrameOutput| -> crate::Result<()> {
        let frame = by_position[o.position];
        if plan.export.labels {
            write_label_png(out.join("labels").join(format!("label_{:06}.png", o.frame_index)), &o.labels)?;
        }
        if plan.export.overlays {
            write_frame(out.join("overlays").join(format!("overlay_{:06}.png", o.frame_index)), &overlay(frame, &o.labels, &colors)?)?;
        }
        if plan.export.masks {
            if let Some(m) = &o.mask {
                write_mask_png(out.join("masks").join(format!("mask_{:06}.png", o.frame_index)), m)?;
            }
        }
        if let Some(f) = o.raw_inconsistency {
            stats.record(o.hops, f);
        }
        if let Some(dir) = &plan.gt {
            let path = dir.join(gt_pattern.format(o.frame_index));
            if path.exists() {
                let gt = read_label_png(&path, num_classes, ignore)?;
                let pred = if o.labels.size() == gt.size() { o.labels.clone() } else { o.labels.resize_nearest(gt.width(), gt.height())? };
                let mut m = ConfusionMatrix::new(num_classes, ignore)?;
                m.accumulate(&pred, &gt).map_err(|e| e.at_frame(o.frame_index))?;
                total.merge(&m)?;
                match per_hop.iter_mut().find(|(h, _)| *h == o.hops) {
                    Some((_, acc)) => acc.merge(&m)?,
                    None => per_hop.push((o.hops, m.clone())),
                }
                if plan.pipeline.anchor.is_some_and(|a| a.frame == o.frame_index) {
                    anchor_matrix = Some(m);
                }
                scored += 1;
            }
        }
        timings.push(FrameTiming {
            frame_index: o.frame_index,
            position: o.position,
            is_keyframe: o.is_keyframe,
            hops: o.hops,
            timings: o.timings,
        });
        Ok(())
    };
    process_stream_with(&frames, segmenter.as_ref(), refiner.as_deref(), &plan.pipeline, &mut sink)?;

    per_hop.sort_by_key(|(h, _)| *h);
    if plan.export.metrics && plan.gt.is_some() {
        let report = MetricsReport {
            schema_version: METRICS_SCHEMA_VERSION,
            operating_point: plan.pipeline.operating_point.clone(),
            frames: frames.len(),
            frames_scored: scored,
            mean_iou: total.mean_iou().ok(),
            pixel_accuracy: total.pixel_accuracy().ok(),
            per_class_iou: total.iou_per_class(),
            per_hop: per_hop
                .iter()
                .map(|(hop, m)| HopScore {
                    hop: *hop,
                    frames: timings.iter().filter(|t| t.hops == *hop).count(),
                    mean_iou: m.mean_iou().ok(),
                })
                .collect(),
            anchor: plan.pipeline.anchor.map(|a| AnchorScore {
                frame: a.frame,
                hops: a.hops,
                mean_iou: anchor_matrix.as_ref().and_then(|m| m.mean_iou().ok()),
            }),
            inconsistency: stats.summary(),
        };
        write_json(&out.join("metrics.json"), &report)?;
        match report.mean_iou {
            Some(m) => println!("mIoU {:.4} over {} scored frames", m, scored),
            None => println!("no scored frames"),
        }
    }
    if plan.export.timings {
        let stages = stage_reports(&timings);
        write_json(
            &out.join("timings.json"),
            &TimingsReport {
                schema_version: METRICS_SCHEMA_VERSION,
                frames: timings,
                stages,
            },
        )?;
    }
    println!("{} frames processed with {}", frames.len(), plan.pipeline.operating_point.name);
    Ok(())
}

#[derive(Serialize)]
struct PairError {
    frame_index: u64,
    endpoint_error: f64,
}

#[derive(Serialize)]
struct FlowReport {
    schema_version: u32,
    preset: DisParams,
    margin: usize,
    pairs: Vec<PairError>,
    mean_endpoint_error: f64,
}

fn cmd_flow(a: FlowArgs) -> CliResult<()> {
    let frames = match (&a.input, &a.pair) {
        (Some(dir), None) => load_frame_sequence(dir, &a.pattern)?,
        (None, Some(pair)) => vec![read_frame(&pair[0])?.with_index(0), read_frame(&pair[1])?.with_index(1)],
        _ => return Err(usage("give either --in DIR or --pair PREV NEXT")),
    };
    if frames.len() < 2 {
        return Err(usage("flow needs at least two frames"));
    }
    let params = match a.preset {
        Preset::Fast => fast_preset(),
    };
    create_dir(&a.out)?;
    let flows = frames
        .windows(2)
        .map(|w| estimate_flow(&w[0], &w[1], &params).map_err(|e| e.at_frame(w[0].index())))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (w, flow) in frames.windows(2).zip(&flows) {
        let idx = w[0].index();
        write_flo(a.out.join(format!("flow_{idx:06}.flo")), flow)?;
        if let Some(gt) = &a.gt_flow {
            let truth = read_flo(gt.join(format!("flow_{idx:06}.flo")))?;
            pairs.push(PairError {
                frame_index: idx,
                endpoint_error: flow.mean_endpoint_error(&truth, a.margin).map_err(|e| e.at_frame(idx))?,
            });
        }
    }
    println!("{} flow fields written", flows.len());
    if !pairs.is_empty() {
        let mean = pairs.iter().map(|p| p.endpoint_error).sum::<f64>() / pairs.len() as f64;
        println!("mean endpoint error {mean:.4} px");
        write_json(
            &a.out.join("epe.json"),
            &FlowReport {
                schema_version: METRICS_SCHEMA_VERSION,
                preset: params,
                margin: a.margin,
                pairs,
                mean_endpoint_error: mean,
            },
        )?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    if let Some(path) = &a.spec {
        let spec = SceneSpec::load(path)?;
        generate(&spec)?.write_to(&a.out)?;
        println!("{} frames written to {}", spec.frame_count, a.out.display());
        return Ok(());
    }
    let specs = match a.suite.expect("clap requires spec or suite") {
        Suite::Crossing => vec![crossing_scene()],
        Suite::Translation => translation_suite(),
        Suite::Smooth => smooth_motion_suite(),
        Suite::Occlusion => occlusion_suite(),
        Suite::Propagation => propagation_suite(20, a.seed),
    };
    for (i, spec) in specs.iter().enumerate() {
        generate(spec)?.write_to(a.out.join(format!("seq_{i:02}")))?;
    }
    println!("{} sequences written to {}", specs.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    schema_version: u32,
    stage: Stage,
    width: usize,
    height: usize,
    workers: usize,
    preset: Option<DisParams>,
    /// Reference timing for this stage, if any.
    reference_ms: Option<f64>,
    /// Non-gating target for a desktop CPU.
    soft_target_ms: Option<f64>,
    meets_soft_target: Option<bool>,
    report: TimingReport,
}

fn bench_scene(width: usize, height: usize) -> SceneSpec {
    let mut spec = translation_scene(3, 1);
    let (sx, sy) = (width as f64 / spec.width as f64, height as f64 / spec.height as f64);
    spec.width = width;
    spec.height = height;
    spec.frame_count = 2;
    for o in &mut spec.objects {
        o.start = [o.start[0] * sx, o.start[1] * sy];
        match &mut o.shape {
            crate::synthgen::Shape::Rectangle { width, height } => {
                *width = (*width * sx).max(1.0);
                *height = (*height * sy).max(1.0);
            }
            crate::synthgen::Shape::Disk { radius } => *radius = (*radius * sx.min(sy)).max(1.0),
        }
    }
    spec
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let (w, h) = parse_size(&a.size)?;
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let workers = crate::pipeline::effective_workers(a.workers.unwrap_or(0));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))?;
    let params = match a.preset {
        Preset::Fast => fast_preset(),
    };
    let spec = bench_scene(w, h);
    let seq = generate(&spec)?;
    let total = a.samples + a.warmup;
    let label = format!("{:?} {w}x{h}", a.stage).to_lowercase();
    let (report, preset, reference, soft) = pool.install(|| -> CliResult<_> {
        Ok(match a.stage {
            Stage::Flow => {
                let (f0, f1) = (&seq.frames[0], &seq.frames[1]);
                estimate_flow(f0, f1, &params)?;
                let r = timed_probe(&label, total, a.warmup, || estimate_flow(f0, f1, &params))?;
                (r, Some(params), Some(5.0), Some(50.0))
            }
            Stage::Remap => {
                let mapping = mapping_from_flow(&seq.flows[0]);
                let tiles = TileGrid::default();
                let r = timed_probe(&label, total, a.warmup, || remap_labels(&seq.labels[0], &mapping, tiles))?;
                (r, None, Some(0.15), Some(5.0))
            }
            Stage::Iam => {
                let iam = IamParams {
                    working_width: w,
                    working_height: h,
                    ..IamParams::default()
                };
                let tiles = TileGrid::default();
                let fwd = &seq.flows[0];
                let bwd = fwd.clone();
                let r = timed_probe(&label, total, a.warmup, || -> crate::Result<()> {
                    let lbf = compute_backforward_labels(&seq.labels[1], fwd, &bwd, tiles)?;
                    let raw = inconsistency_mask(&seq.labels[1], &lbf)?;
                    dilate_and_smooth(&raw, &iam)?;
                    Ok(())
                })?;
                (r, None, None, None)
            }
            Stage::Pipeline => {
                let seg = spec.palette_segmenter()?;
                let mut config = PipelineConfig::new(operating_point("EVS-02")?);
                config.workers = workers;
                config.dis = params;
                config.iam.working_width = w.min(512);
                config.iam.working_height = h.min(256);
                config.flow_resolution = FlowResolution::Fixed {
                    width: w.min(512),
                    height: h.min(256),
                };
                let r = timed_probe(&label, total, a.warmup, || {
                    crate::pipeline::process_stream(&seq.frames, &seg, Some(&PassthroughRefiner), &config)
                })?;
                (r, Some(params), None, None)
            }
        })
    })?;
    let out = BenchReport {
        schema_version: METRICS_SCHEMA_VERSION,
        stage: a.stage,
        width: w,
        height: h,
        workers,
        preset,
        reference_ms: reference,
        soft_target_ms: soft,
        meets_soft_target: soft.map(|t| report.median_ms < t),
        report,
    };
    println!(
        "{}: mean {:.3} ms, median {:.3} ms, stddev {:.3} ms over {} samples{}",
        out.report.label,
        out.report.mean_ms,
        out.report.median_ms,
        out.report.stddev_ms,
        out.report.samples,
        if out.report.skewed { " (mean and median disagree)" } else { "" }
    );
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?),
    }
    Ok(())
}

/// Names of the built-in operating points, for help output.
pub fn operating_point_names() -> Vec<String> {
    builtin_operating_points().into_iter().map(|p| p.name).collect()
}
