//! Keyframe scheduling: full segmentation every S-th frame, flow-based
//! propagation in between, optional refinement of inconsistent regions.
//!
//! Two workers exchange values over an ordered channel. The segmentation
//! worker runs the segmenter on keyframes in order; the flow/warp worker
//! estimates all flows of the upcoming keyframe window while that keyframe
//! is being segmented, then propagates and emits outputs in frame order.

use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disflow::{estimate_on_pyramids, DisParams, Pyramid};
use crate::error::{Error, Result};
use crate::iam::{blend, dilate_and_smooth, round_trip_mask, IamParams};
use crate::imagery::{resize_area_frame, FeatureMap, FlowField, Frame, InconsistencyMask, LabelMap, ProbabilityMap};
use crate::propagation::{mapping_at, remap_features, remap_labels, remap_probabilities, TileGrid};
use crate::segmentation::{Downscale, RefinerBackend, SegmenterBackend, SegmenterOutput, PREDICTION_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub name: String,
    /// `D`: input scale handed to the segmenter.
    pub downscale: Downscale,
    /// `S`: a keyframe every `S` frames.
    pub segmentation_period: usize,
    /// `W`: propagate by warping between keyframes.
    pub warping: bool,
    /// `R`: refine inconsistent regions of warped frames.
    pub refinement: bool,
}

impl OperatingPoint {
    pub fn new(name: impl Into<String>, downscale: Downscale, period: usize, warping: bool, refinement: bool) -> Result<Self> {
        let op = Self {
            name: name.into(),
            downscale,
            segmentation_period: period,
            warping,
            refinement,
        };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segmentation_period == 0 {
            return Err(Error::InvalidParameter("segmentation period must be at least 1".into()));
        }
        if self.refinement && !self.warping {
            return Err(Error::InvalidParameter(format!(
                "operating point {}: refinement requires warping",
                self.name
            )));
        }
        Ok(())
    }
}

/// The fourteen named operating points, fastest first.
pub fn builtin_operating_points() -> Vec<OperatingPoint> {
    use Downscale::{Full, Half};
    [
        ("EVS-14", Half, 17, true, false),
        ("EVS-13", Half, 10, false, false),
        ("EVS-12", Half, 10, true, false),
        ("EVS-11", Full, 10, false, false),
        ("EVS-10", Full, 10, true, false),
        ("EVS-09", Half, 5, false, false),
        ("EVS-08", Full, 5, false, false),
        ("EVS-07", Full, 5, true, false),
        ("EVS-06", Full, 5, true, true),
        ("EVS-05", Full, 3, true, false),
        ("EVS-04", Full, 3, true, true),
        ("EVS-03", Full, 2, true, false),
        ("EVS-02", Full, 2, true, true),
        ("EVS-01", Full, 1, true, true),
    ]
    .into_iter()
    .map(|(name, d, s, w, r)| OperatingPoint {
        name: name.to_string(),
        downscale: d,
        segmentation_period: s,
        warping: w,
        refinement: r,
    })
    .collect()
}

/// Looks up a built-in point; accepts `EVS-6` as well as `EVS-06`.
pub fn operating_point(name: &str) -> Result<OperatingPoint> {
    let points = builtin_operating_points();
    let normalized = name
        .to_ascii_uppercase()
        .strip_prefix("EVS-")
        .and_then(|n| n.parse::<u32>().ok())
        .map(|n| format!("EVS-{n:02}"));
    points
        .iter()
        .find(|p| Some(&p.name) == normalized.as_ref())
        .cloned()
        .ok_or_else(|| Error::UnknownOperatingPoint {
            name: name.to_string(),
            valid: points.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", "),
        })
}

/// Resolution at which flow is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowResolution {
    /// Input frame resolution.
    Full,
    Fixed { width: usize, height: usize },
}

impl Default for FlowResolution {
    fn default() -> Self {
        FlowResolution::Fixed {
            width: PREDICTION_SIZE.0,
            height: PREDICTION_SIZE.1,
        }
    }
}

impl FlowResolution {
    pub fn size_for(&self, frame: (usize, usize)) -> (usize, usize) {
        match *self {
            FlowResolution::Full => frame,
            FlowResolution::Fixed { width, height } => (width, height),
        }
    }
}

/// Shifts the keyframe phase so that frame `frame` falls `hops` frames
/// after a keyframe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub frame: u64,
    pub hops: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub operating_point: OperatingPoint,
    pub flow_resolution: FlowResolution,
    pub iam: IamParams,
    pub tiles: TileGrid,
    pub dis: DisParams,
    /// Thread count; 0 picks the machine's parallelism. `EVS_THREADS`
    /// caps either.
    pub workers: usize,
    pub anchor: Option<Anchor>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            operating_point: operating_point("EVS-06").expect("built-in point"),
            flow_resolution: FlowResolution::default(),
            iam: IamParams::default(),
            tiles: TileGrid::default(),
            dis: DisParams::default(),
            workers: 0,
            anchor: None,
        }
    }
}

impl PipelineConfig {
    pub fn new(operating_point: OperatingPoint) -> Self {
        Self {
            operating_point,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.operating_point.validate()?;
        self.iam.validate()?;
        self.dis.validate()?;
        if let Some(a) = self.anchor {
            if a.hops >= self.operating_point.segmentation_period {
                return Err(Error::InvalidParameter(format!(
                    "anchor hops {} must be below the segmentation period {}",
                    a.hops, self.operating_point.segmentation_period
                )));
            }
        }
        Ok(())
    }
}

/// Worker count after applying the `EVS_THREADS` cap.
pub fn effective_workers(requested: usize) -> usize {
    let auto = std::thread::available_parallelism().map_or(1, |n| n.get());
    let n = if requested == 0 { auto } else { requested };
    let cap = std::env::var("EVS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&c| c > 0);
    cap.map_or(n, |c| n.min(c)).max(1)
}

/// Keyframe flags for `frames`, honouring the anchor.
pub fn keyframe_schedule(frames: &[Frame], op: &OperatingPoint, anchor: Option<Anchor>) -> Result<Vec<bool>> {
    let s = op.segmentation_period;
    let phase = match anchor {
        None => 0,
        Some(a) => {
            let pos = frames.iter().position(|f| f.index() == a.frame).ok_or(Error::MissingFrame {
                frame_index: a.frame,
                reason: "anchor frame is not part of the input".into(),
            })?;
            (pos + s * (a.hops / s + 1) - a.hops) % s
        }
    };
    Ok((0..frames.len()).map(|p| p == 0 || p % s == phase).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub segmentation_ms: Option<f64>,
    pub flow_ms: Option<f64>,
    pub warp_ms: Option<f64>,
    pub iam_ms: Option<f64>,
    pub refine_ms: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub frame_index: u64,
    pub position: usize,
    pub is_keyframe: bool,
    /// Frames since the last keyframe.
    pub hops: usize,
    pub labels: LabelMap,
    pub probabilities: ProbabilityMap,
    /// Dilated and smoothed mask, at the inconsistency working size.
    pub mask: Option<InconsistencyMask>,
    /// Fraction of raw (undilated) inconsistent pixels.
    pub raw_inconsistency: Option<f64>,
    pub timings: StageTimings,
}

struct PairFlows {
    forward: FlowField,
    backward: Option<FlowField>,
    ms: f64,
}

struct State {
    probabilities: ProbabilityMap,
    labels: LabelMap,
    features: FeatureMap,
}

fn estimate_pair(prev: &Frame, cur: &Frame, size: (usize, usize), params: &DisParams, backward: bool) -> Result<PairFlows> {
    let t = Instant::now();
    let (w, h) = size;
    let levels = params.levels_for(w, h)?;
    let build = |f: &Frame| -> Result<Pyramid> {
        let small = if f.size() == size { f.clone() } else { resize_area_frame(f, w, h)? };
        Pyramid::build(&small, levels, params.patch_size)
    };
    let (a, b) = rayon::join(|| build(prev), || build(cur));
    let (a, b) = (a?, b?);
    let (forward, backward) = if backward {
        let (f, b) = rayon::join(|| estimate_on_pyramids(&a, &b, params), || estimate_on_pyramids(&b, &a, params));
        (f, Some(b))
    } else {
        (estimate_on_pyramids(&a, &b, params), None)
    };
    Ok(PairFlows {
        forward,
        backward,
        ms: t.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs the schedule over `frames`, collecting every output.
pub fn process_stream(
    frames: &[Frame],
    segmenter: &dyn SegmenterBackend,
    refiner: Option<&dyn RefinerBackend>,
    config: &PipelineConfig,
) -> Result<Vec<FrameOutput>> {
    let mut out = Vec::with_capacity(frames.len());
    process_stream_with(frames, segmenter, refiner, config, |o| {
        out.push(o);
        Ok(())
    })?;
    Ok(out)
}

/// Runs the schedule, handing each output to `sink` in frame order.
pub fn process_stream_with(
    frames: &[Frame],
    segmenter: &dyn SegmenterBackend,
    refiner: Option<&dyn RefinerBackend>,
    config: &PipelineConfig,
    mut sink: impl FnMut(FrameOutput) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    let op = &config.operating_point;
    if frames.is_empty() {
        return Err(Error::InvalidParameter("no frames to process".into()));
    }
    if let Some(f) = frames.iter().find(|f| f.size() != frames[0].size()) {
        return Err(Error::DimensionMismatch {
            what: "frame",
            left: f.size(),
            right: frames[0].size(),
        }
        .at_frame(f.index()));
    }
    let refiner = match (op.refinement, refiner) {
        (true, None) => {
            return Err(Error::InvalidParameter(format!(
                "operating point {} enables refinement but no refiner was given",
                op.name
            )))
        }
        (true, Some(r)) => Some(r),
        (false, _) => None,
    };
    let is_key = keyframe_schedule(frames, op, config.anchor)?;
    let keyframes: Vec<usize> = (0..frames.len()).filter(|&p| is_key[p]).collect();
    let flow_size = config.flow_resolution.size_for(frames[0].size());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_workers(config.workers))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;

    let (tx, rx) = mpsc::sync_channel::<(usize, Result<SegmenterOutput>, f64)>(1);
    std::thread::scope(|scope| {
        let pool = &pool;
        let keys = &keyframes;
        scope.spawn(move || {
            for &k in keys {
                let t = Instant::now();
                // leave the pool before blocking on the channel
                let r = pool.install(|| segmenter.segment(&frames[k], op.downscale));
                if tx.send((k, r, t.elapsed().as_secs_f64() * 1e3)).is_err() {
                    break;
                }
            }
        });

        // the flow/warp worker is this thread; heavy steps run on the pool.
        // Owning the receiver here drops it on early return, which unblocks
        // the segmentation thread before the scope joins it.
        let rx = rx;
        {
            for (wi, &k) in keyframes.iter().enumerate() {
                let end = keyframes.get(wi + 1).copied().unwrap_or(frames.len());
                let flows: Vec<PairFlows> = if op.warping {
                    pool.install(|| {
                        (k + 1..end)
                            .into_par_iter()
                            .map(|p| {
                                estimate_pair(&frames[p - 1], &frames[p], flow_size, &config.dis, op.refinement)
                                    .map_err(|e| e.at_frame(frames[p].index()))
                            })
                            .collect::<Result<_>>()
                    })?
                } else {
                    Vec::new()
                };

                let (pos, seg, seg_ms) = rx
                    .recv()
                    .map_err(|_| Error::InvalidParameter("segmentation worker stopped early".into()))?;
                debug_assert_eq!(pos, k);
                let seg = seg.map_err(|e| e.at_frame(frames[k].index()))?;
                sink(FrameOutput {
                    frame_index: frames[k].index(),
                    position: k,
                    is_keyframe: true,
                    hops: 0,
                    labels: seg.labels.clone(),
                    probabilities: seg.probabilities.clone(),
                    mask: None,
                    raw_inconsistency: None,
                    timings: StageTimings {
                        segmentation_ms: Some(seg_ms),
                        ..StageTimings::default()
                    },
                })?;
                let mut st = State {
                    probabilities: seg.probabilities,
                    labels: seg.labels,
                    features: seg.features,
                };

                for p in k + 1..end {
                    let output = if op.warping {
                        pool.install(|| propagate(&frames[p], &st, &flows[p - k - 1], refiner, config))
                    } else {
                        Ok((
                            State {
                                probabilities: st.probabilities.clone(),
                                labels: st.labels.clone(),
                                features: st.features.clone(),
                            },
                            None,
                            None,
                            StageTimings::default(),
                        ))
                    };
                    let (next, mask, raw, timings) = output.map_err(|e| e.at_frame(frames[p].index()))?;
                    sink(FrameOutput {
                        frame_index: frames[p].index(),
                        position: p,
                        is_keyframe: false,
                        hops: p - k,
                        labels: next.labels.clone(),
                        probabilities: next.probabilities.clone(),
                        mask,
                        raw_inconsistency: raw,
                        timings,
                    })?;
                    st = next;
                }
            }
            Ok(())
        }
    })
}

type Propagated = (State, Option<InconsistencyMask>, Option<f64>, StageTimings);

fn propagate(
    frame: &Frame,
    st: &State,
    flows: &PairFlows,
    refiner: Option<&dyn RefinerBackend>,
    config: &PipelineConfig,
) -> Result<Propagated> {
    let tiles = config.tiles;
    let mut timings = StageTimings {
        flow_ms: Some(flows.ms),
        ..StageTimings::default()
    };
    let t = Instant::now();
    let (pw, ph) = st.probabilities.size();
    let map_p = mapping_at(&flows.forward, pw, ph)?;
    let probabilities = remap_probabilities(&st.probabilities, &map_p, tiles)?;
    let labels = if st.labels.size() == (pw, ph) {
        remap_labels(&st.labels, &map_p, tiles)?
    } else {
        let (lw, lh) = st.labels.size();
        remap_labels(&st.labels, &mapping_at(&flows.forward, lw, lh)?, tiles)?
    };
    let (fw, fh) = st.features.size();
    let map_f = if (fw, fh) == (pw, ph) { map_p } else { mapping_at(&flows.forward, fw, fh)? };
    let features = remap_features(&st.features, &map_f, tiles)?;
    timings.warp_ms = Some(t.elapsed().as_secs_f64() * 1e3);

    let Some(refiner) = refiner else {
        return Ok((
            State {
                probabilities,
                labels,
                features,
            },
            None,
            None,
            timings,
        ));
    };
    let backward = flows.backward.as_ref().expect("backward flow estimated when refining");

    let t = Instant::now();
    let (iw, ih) = config.iam.working_size();
    let at_iam = |f: &FlowField| if f.size() == (iw, ih) { Ok(f.clone()) } else { f.resize_nearest(iw, ih) };
    let lf = if labels.size() == (iw, ih) { labels.clone() } else { labels.resize_nearest(iw, ih)? };
    let raw = round_trip_mask(&lf, &at_iam(&flows.forward)?, &at_iam(backward)?, tiles, config.iam.round_trip)?;
    let raw_fraction = raw.fraction_at_least(0.5);
    let mask = dilate_and_smooth(&raw, &config.iam)?;
    timings.iam_ms = Some(t.elapsed().as_secs_f64() * 1e3);

    let t = Instant::now();
    let refined = refiner.refine(frame, &probabilities, &features)?;
    timings.refine_ms = Some(t.elapsed().as_secs_f64() * 1e3);

    let mask_p = if mask.size() == (pw, ph) { mask.clone() } else { mask.resize_nearest(pw, ph)? };
    let blended = blend(&refined, &probabilities, &mask_p)?;
    let labels = blended.argmax(st.labels.ignore_id())?;
    Ok((
        State {
            probabilities: blended,
            labels,
            features,
        },
        Some(mask),
        Some(raw_fraction),
        timings,
    ))
}

/// How frames become available to the scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamMode {
    /// Every frame is on disk before processing starts.
    Recorded,
    /// Frame `p` arrives at `p * frame_interval_ms`.
    Live { frame_interval_ms: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Worker {
    Segmentation,
    FlowWarp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Segment,
    /// Flow from `position - 1` to `position`.
    Flow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTask {
    pub worker: Worker,
    pub kind: TaskKind,
    pub position: usize,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub tasks: Vec<PlannedTask>,
    /// `(position, time)` in emission order.
    pub emissions: Vec<(usize, f64)>,
    pub makespan_ms: f64,
    /// Time the same work takes on a single worker.
    pub sequential_ms: f64,
    pub overlap_benefit_ms: f64,
}

impl SchedulePlan {
    /// Flow tasks running while segmentation of keyframe `k` is in
    /// progress.
    pub fn flows_overlapping(&self, k: usize) -> usize {
        let Some(seg) = self
            .tasks
            .iter()
            .find(|t| t.kind == TaskKind::Segment && t.position == k)
        else {
            return 0;
        };
        self.tasks
            .iter()
            .filter(|t| t.kind == TaskKind::Flow && t.start_ms < seg.end_ms && t.end_ms > seg.start_ms)
            .count()
    }
}

/// Timeline of the two workers for `frames` frames under `op`, with one
/// flow task per consecutive pair when warping is on.
pub fn schedule_concurrency(
    op: &OperatingPoint,
    segment_ms: f64,
    flow_ms: f64,
    mode: StreamMode,
    frames: usize,
) -> Result<SchedulePlan> {
    op.validate()?;
    if !(segment_ms >= 0.0 && flow_ms >= 0.0) {
        return Err(Error::InvalidParameter("stage costs must be non-negative".into()));
    }
    let s = op.segmentation_period;
    let arrival = |p: usize| match mode {
        StreamMode::Recorded => 0.0,
        StreamMode::Live { frame_interval_ms } => p as f64 * frame_interval_ms,
    };
    let mut tasks = Vec::new();
    let mut seg_free = 0.0f64;
    let mut seg_end = vec![None; frames];
    for p in (0..frames).filter(|p| p % s == 0) {
        let start = seg_free.max(arrival(p));
        seg_free = start + segment_ms;
        seg_end[p] = Some(seg_free);
        tasks.push(PlannedTask {
            worker: Worker::Segmentation,
            kind: TaskKind::Segment,
            position: p,
            start_ms: start,
            end_ms: seg_free,
        });
    }
    let flows_on = op.warping && s > 1;
    let mut flow_free = 0.0f64;
    let mut flow_end = vec![0.0; frames];
    if flows_on {
        for p in 1..frames {
            let start = flow_free.max(arrival(p));
            flow_free = start + flow_ms;
            flow_end[p] = flow_free;
            tasks.push(PlannedTask {
                worker: Worker::FlowWarp,
                kind: TaskKind::Flow,
                position: p,
                start_ms: start,
                end_ms: flow_free,
            });
        }
    }
    let mut emissions = Vec::with_capacity(frames);
    let mut last = 0.0f64;
    let mut key_done = 0.0f64;
    for p in 0..frames {
        let ready = match seg_end[p] {
            Some(t) => {
                key_done = t;
                t
            }
            None if flows_on => key_done.max(flow_end[p]),
            None => key_done.max(arrival(p)),
        };
        last = last.max(ready);
        emissions.push((p, last));
    }
    let sequential_ms = tasks.iter().map(|t| t.end_ms - t.start_ms).sum::<f64>();
    let makespan_ms = last;
    Ok(SchedulePlan {
        tasks,
        emissions,
        makespan_ms,
        sequential_ms,
        overlap_benefit_ms: match mode {
            StreamMode::Recorded => (sequential_ms - makespan_ms).max(0.0),
            StreamMode::Live { .. } => 0.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_points() {
        let p = operating_point("EVS-06").unwrap();
        assert_eq!((p.downscale, p.segmentation_period, p.warping, p.refinement), (Downscale::Full, 5, true, true));
        let p = operating_point("evs-14").unwrap();
        assert_eq!((p.downscale, p.segmentation_period, p.warping, p.refinement), (Downscale::Half, 17, true, false));
        assert_eq!(operating_point("EVS-6").unwrap().name, "EVS-06");
        let err = operating_point("EVS-15").unwrap_err().to_string();
        assert!(err.contains("EVS-01") && err.contains("EVS-14"), "{err}");
        for p in builtin_operating_points() {
            p.validate().unwrap();
        }
    }

    #[test]
    fn refinement_requires_warping() {
        assert!(OperatingPoint::new("x", Downscale::Full, 3, false, true).is_err());
        assert!(OperatingPoint::new("x", Downscale::Full, 0, true, false).is_err());
    }

    fn frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::from_fn(4, 4, 100 + i as u64, |_, _| [0, 0, 0]).unwrap()).collect()
    }

    #[test]
    fn keyframes_follow_period_and_anchor() {
        let op = OperatingPoint::new("t", Downscale::Full, 5, true, false).unwrap();
        let f = frames(12);
        let k = keyframe_schedule(&f, &op, None).unwrap();
        let on: Vec<usize> = (0..12).filter(|&p| k[p]).collect();
        assert_eq!(on, vec![0, 5, 10]);
        // frame 119 does not exist; frame 109 sits at position 9
        assert!(keyframe_schedule(&f, &op, Some(Anchor { frame: 119, hops: 2 })).is_err());
        let k = keyframe_schedule(&f, &op, Some(Anchor { frame: 109, hops: 3 })).unwrap();
        let on: Vec<usize> = (0..12).filter(|&p| k[p]).collect();
        assert_eq!(on, vec![0, 1, 6, 11]);
    }

    #[test]
    fn plan_overlaps_flow_with_segmentation() {
        let op = operating_point("EVS-07").unwrap();
        let plan = schedule_concurrency(&op, 25.0, 5.0, StreamMode::Recorded, 30).unwrap();
        assert_eq!(plan.flows_overlapping(0), 5);
        let order: Vec<usize> = plan.emissions.iter().map(|e| e.0).collect();
        assert_eq!(order, (0..30).collect::<Vec<_>>());
        assert!(plan.emissions.windows(2).all(|w| w[0].1 <= w[1].1));

        let s1 = operating_point("EVS-01").unwrap();
        let plan = schedule_concurrency(&s1, 25.0, 5.0, StreamMode::Recorded, 10).unwrap();
        assert!(plan.tasks.iter().all(|t| t.kind == TaskKind::Segment));

        let free = schedule_concurrency(&op, 25.0, 0.0, StreamMode::Recorded, 30).unwrap();
        assert_eq!(free.overlap_benefit_ms, 0.0);
    }
}
