//! Estimates flow on rendered pans and reports the endpoint error
//! against the rendered motion.

use std::time::Instant;

use evs::disflow::{estimate_flow, fast_preset};
use evs::synthgen::{generate, translation_scene};

fn main() -> evs::Result<()> {
    let params = fast_preset();
    for (vx, vy) in [(0, 0), (2, 0), (-3, 1), (5, -4)] {
        let seq = generate(&translation_scene(vx, vy))?;
        let t = Instant::now();
        let flow = estimate_flow(&seq.frames[0], &seq.frames[1], &params)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        let epe = flow.mean_endpoint_error(&seq.flows[0], 8)?;
        println!("pan ({vx:+}, {vy:+}): EPE {epe:.3} px in {ms:.1} ms");
    }
    Ok(())
}
