use std::collections::HashMap;

use evs::imagery::{Frame, LabelMap};
use evs::pipeline::{
    keyframe_schedule, operating_point, process_stream, process_stream_with, schedule_concurrency, Anchor,
    OperatingPoint, PipelineConfig, StreamMode, TaskKind,
};
use evs::segmentation::{Downscale, OracleRefiner, PassthroughRefiner, SegmenterBackend};
use evs::synthgen::{crossing_scene, generate, SceneSpec, SyntheticSequence};
use evs::Error;

fn point(period: usize, warping: bool, refinement: bool) -> OperatingPoint {
    OperatingPoint::new("test", Downscale::Full, period, warping, refinement).unwrap()
}

fn short_crossing(frames: usize) -> SyntheticSequence {
    let mut spec = crossing_scene();
    spec.frame_count = frames;
    generate(&spec).unwrap()
}

#[test]
fn period_one_reproduces_the_segmenter() {
    let seq = short_crossing(5);
    let seg = seq.spec.palette_segmenter().unwrap();
    let out = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(1, true, false))).unwrap();
    for (o, f) in out.iter().zip(&seq.frames) {
        let direct = seg.segment(f, Downscale::Full).unwrap();
        assert!(o.is_keyframe);
        assert_eq!(o.probabilities, direct.probabilities);
        assert_eq!(o.labels, direct.labels);
    }
}

#[test]
fn outputs_arrive_in_order_with_hop_counts() {
    let seq = short_crossing(11);
    let seg = seq.spec.palette_segmenter().unwrap();
    let out = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(4, true, false))).unwrap();
    let hops: Vec<usize> = out.iter().map(|o| o.hops).collect();
    assert_eq!(hops, vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2]);
    assert!(out.iter().enumerate().all(|(i, o)| o.position == i && o.frame_index == i as u64));
    assert!(out.iter().all(|o| o.is_keyframe == (o.hops == 0)));
    assert!(out.iter().all(|o| o.mask.is_none()));
}

#[test]
fn static_scene_propagates_the_keyframe_unchanged() {
    let mut spec: SceneSpec = crossing_scene();
    spec.frame_count = 6;
    for o in &mut spec.objects {
        o.velocity = [0.0, 0.0];
    }
    let seq = generate(&spec).unwrap();
    let seg = spec.palette_segmenter().unwrap();
    let out = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(3, true, false))).unwrap();
    for o in &out {
        assert_eq!(o.probabilities, out[0].probabilities);
        assert_eq!(o.labels, out[0].labels);
    }
}

#[test]
fn without_warping_the_last_keyframe_is_held() {
    let seq = short_crossing(6);
    let seg = seq.spec.palette_segmenter().unwrap();
    let out = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(3, false, false))).unwrap();
    assert_eq!(out[1].labels, out[0].labels);
    assert_eq!(out[2].probabilities, out[0].probabilities);
    assert_eq!(out[4].labels, out[3].labels);
    assert_ne!(out[3].labels, out[0].labels);
    assert!(out.iter().all(|o| o.timings.flow_ms.is_none()));
}

#[test]
fn passthrough_refinement_equals_plain_warping() {
    let seq = short_crossing(7);
    let seg = seq.spec.palette_segmenter().unwrap();
    let plain = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(4, true, false))).unwrap();
    let refined =
        process_stream(&seq.frames, &seg, Some(&PassthroughRefiner), &PipelineConfig::new(point(4, true, true))).unwrap();
    for (a, b) in plain.iter().zip(&refined) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.probabilities, b.probabilities);
        assert_eq!(b.mask.is_some(), !b.is_keyframe);
    }
}

#[test]
fn oracle_refinement_never_hurts_warped_frames() {
    let seq = short_crossing(10);
    let seg = seq.spec.palette_segmenter().unwrap();
    let gt: HashMap<u64, LabelMap> = seq.labels.iter().cloned().enumerate().map(|(i, l)| (i as u64, l)).collect();
    let oracle = OracleRefiner::new(gt);
    let plain = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(5, true, false))).unwrap();
    let refined = process_stream(&seq.frames, &seg, Some(&oracle), &PipelineConfig::new(point(5, true, true))).unwrap();
    let correct = |l: &LabelMap, t: usize| l.labels().iter().zip(seq.labels[t].labels()).filter(|(a, b)| a == b).count();
    let mut gained = 0;
    for (a, b) in plain.iter().zip(&refined) {
        let (ca, cb) = (correct(&a.labels, a.position), correct(&b.labels, b.position));
        assert!(cb >= ca, "frame {}: {cb} < {ca}", a.position);
        gained += cb - ca;
    }
    assert!(gained > 0);
}

#[test]
fn refinement_without_a_refiner_is_rejected() {
    let seq = short_crossing(3);
    let seg = seq.spec.palette_segmenter().unwrap();
    let err = process_stream(&seq.frames, &seg, None, &PipelineConfig::new(point(2, true, true))).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)), "{err}");
}

#[test]
fn mixed_frame_sizes_are_rejected() {
    let seq = short_crossing(3);
    let seg = seq.spec.palette_segmenter().unwrap();
    let mut frames = seq.frames.clone();
    frames.push(Frame::from_fn(64, 64, 3, |_, _| [0, 0, 0]).unwrap());
    assert!(process_stream(&frames, &seg, None, &PipelineConfig::new(point(2, true, false))).is_err());
    assert!(process_stream(&[], &seg, None, &PipelineConfig::new(point(2, true, false))).is_err());
}

#[test]
fn sink_errors_stop_the_stream() {
    let seq = short_crossing(12);
    let seg = seq.spec.palette_segmenter().unwrap();
    let mut seen = 0;
    let r = process_stream_with(&seq.frames, &seg, None, &PipelineConfig::new(point(2, true, false)), |_| {
        seen += 1;
        Err(Error::InvalidParameter("stop".into()))
    });
    assert!(r.is_err());
    assert_eq!(seen, 1);
}

#[test]
fn anchor_places_the_frame_at_the_requested_hop() {
    let seq = short_crossing(12);
    let op = point(4, true, false);
    for hops in 0..4 {
        let anchor = Anchor { frame: 9, hops };
        let keys = keyframe_schedule(&seq.frames, &op, Some(anchor)).unwrap();
        assert!(keys[0]);
        let last_key = (0..=9).rev().find(|&p| keys[p]).unwrap();
        assert_eq!(9 - last_key, hops);
        let mut config = PipelineConfig::new(op.clone());
        config.anchor = Some(anchor);
        let seg = seq.spec.palette_segmenter().unwrap();
        let out = process_stream(&seq.frames, &seg, None, &config).unwrap();
        assert_eq!(out[9].hops, hops);
    }
    let mut config = PipelineConfig::new(op);
    config.anchor = Some(Anchor { frame: 9, hops: 4 });
    assert!(config.validate().is_err());
}

#[test]
fn named_points_cover_the_table() {
    let names: Vec<String> = evs::pipeline::builtin_operating_points().into_iter().map(|p| p.name).collect();
    assert_eq!(names.len(), 14);
    let p = operating_point("EVS-03").unwrap();
    assert_eq!((p.segmentation_period, p.warping, p.refinement), (2, true, false));
    assert!(matches!(operating_point("fast"), Err(Error::UnknownOperatingPoint { .. })));
}

#[test]
fn schedule_overlaps_flows_with_segmentation() {
    let op = point(5, true, false);
    let plan = schedule_concurrency(&op, 40.0, 4.0, StreamMode::Recorded, 10).unwrap();
    let flows = plan.tasks.iter().filter(|t| t.kind == TaskKind::Flow).count();
    assert_eq!(flows, 9);
    // 9 flows of 4 ms next to 2 segmentations of 40 ms
    assert_eq!(plan.sequential_ms, 116.0);
    assert_eq!(plan.makespan_ms, 80.0);
    assert_eq!(plan.overlap_benefit_ms, 36.0);
    // recorded frames are all available, so every flow runs during the first segmentation
    assert_eq!(plan.flows_overlapping(0), 9);
    assert_eq!(plan.flows_overlapping(5), 0);
    let times: Vec<f64> = plan.emissions.iter().map(|e| e.1).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));

    let live = schedule_concurrency(&op, 40.0, 4.0, StreamMode::Live { frame_interval_ms: 10.0 }, 10).unwrap();
    assert!(live.tasks.iter().all(|t| t.start_ms >= t.position as f64 * 10.0));
    assert_eq!(live.overlap_benefit_ms, 0.0);
}

#[test]
fn five_flows_fit_in_one_segmentation_window() {
    let plan = schedule_concurrency(&point(5, true, false), 25.0, 5.0, StreamMode::Recorded, 10).unwrap();
    assert_eq!(plan.flows_overlapping(0), 5);

    let keyframes_only = schedule_concurrency(&point(1, true, false), 25.0, 5.0, StreamMode::Recorded, 10).unwrap();
    assert!(keyframes_only.tasks.iter().all(|t| t.kind == TaskKind::Segment));
    assert_eq!(keyframes_only.overlap_benefit_ms, 0.0);

    let free = schedule_concurrency(&point(5, true, false), 25.0, 0.0, StreamMode::Recorded, 10).unwrap();
    assert_eq!(free.overlap_benefit_ms, 0.0);
    let order: Vec<usize> = free.emissions.iter().map(|e| e.0).collect();
    assert_eq!(order, (0..10).collect::<Vec<_>>());
}
