//! Times label remapping at 2048x1024 with warm-up runs discarded.

use evs::evaluation::timed_probe;
use evs::imagery::{FlowField, LabelMap};
use evs::propagation::{mapping_from_flow, remap_labels, TileGrid};

fn main() -> evs::Result<()> {
    let (w, h) = (2048, 1024);
    let labels = LabelMap::from_fn(w, h, 19, 255, |x, y| ((x / 64 + y / 64) % 19) as u8)?;
    let flow = FlowField::from_fn(w, h, |x, y| ((x % 7) as f32 - 3.0, (y % 5) as f32 - 2.0))?;
    let mapping = mapping_from_flow(&flow);
    for grid in [TileGrid::single(), TileGrid::new(4, 4)?] {
        let r = timed_probe("remap", 120, 20, || remap_labels(&labels, &mapping, grid))?;
        println!(
            "{:?}: mean {:.3} ms, median {:.3} ms, stddev {:.3} ms over {} samples{}",
            grid,
            r.mean_ms,
            r.median_ms,
            r.stddev_ms,
            r.samples,
            if r.skewed { " (skewed)" } else { "" }
        );
    }
    Ok(())
}
