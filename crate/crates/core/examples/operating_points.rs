//! Runs every built-in operating point over the crossing scene with the
//! palette segmenter and an oracle refiner.

use std::collections::HashMap;

use evs::evaluation::ConfusionMatrix;
use evs::pipeline::{builtin_operating_points, process_stream, PipelineConfig};
use evs::segmentation::OracleRefiner;
use evs::synthgen::{crossing_scene, generate};

fn main() -> evs::Result<()> {
    let mut spec = crossing_scene();
    spec.frame_count = 12;
    let seq = generate(&spec)?;
    let seg = spec.palette_segmenter()?;
    let gt: HashMap<u64, _> = seq.labels.iter().cloned().enumerate().map(|(i, l)| (i as u64, l)).collect();
    let oracle = OracleRefiner::new(gt);

    println!("{:<7} {:>3} {:>2} {:>2} {:>5}  mIoU", "point", "S", "W", "R", "D");
    for op in builtin_operating_points() {
        let config = PipelineConfig::new(op.clone());
        let out = process_stream(&seq.frames, &seg, op.refinement.then_some(&oracle as _), &config)?;
        let mut m = ConfusionMatrix::new(seq.num_classes(), 255)?;
        for o in &out {
            let gt = &seq.labels[o.position];
            m.accumulate(&o.labels.resize_nearest(gt.width(), gt.height())?, gt)?;
        }
        println!(
            "{:<7} {:>3} {:>2} {:>2} {:>5}  {:.4}",
            op.name,
            op.segmentation_period,
            op.warping as u8,
            op.refinement as u8,
            op.downscale.factor(),
            m.mean_iou()?
        );
    }
    Ok(())
}
