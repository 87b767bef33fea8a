//! Carries the first ground-truth labels forward with estimated flow and
//! prints per-frame accuracy as the hops accumulate.

use evs::disflow::{estimate_flow, fast_preset};
use evs::evaluation::frame_miou;
use evs::propagation::{mapping_from_flow, remap_labels, TileGrid};
use evs::synthgen::{crossing_scene, generate};

fn main() -> evs::Result<()> {
    let mut spec = crossing_scene();
    spec.frame_count = 8;
    let seq = generate(&spec)?;
    let tiles = TileGrid::new(4, 4)?;
    let mut labels = seq.labels[0].clone();
    for t in 1..seq.frames.len() {
        let flow = estimate_flow(&seq.frames[t - 1], &seq.frames[t], &fast_preset())?;
        labels = remap_labels(&labels, &mapping_from_flow(&flow), tiles)?;
        println!("hop {t}: mIoU {:.4}", frame_miou(&labels, &seq.labels[t])?);
    }
    Ok(())
}
