//! Compares warped-only output with oracle-refined output on the
//! occlusion suite, hop by hop.

use std::collections::HashMap;

use evs::evaluation::frame_miou;
use evs::pipeline::{process_stream, OperatingPoint, PipelineConfig};
use evs::segmentation::{Downscale, OracleRefiner};
use evs::synthgen::{generate, occlusion_suite};

fn main() -> evs::Result<()> {
    let period = 5;
    let mut plain_sum = vec![0.0; period];
    let mut refined_sum = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for spec in occlusion_suite() {
        let seq = generate(&spec)?;
        let seg = spec.palette_segmenter()?;
        let gt: HashMap<u64, _> = seq.labels.iter().cloned().enumerate().map(|(i, l)| (i as u64, l)).collect();
        let oracle = OracleRefiner::new(gt);
        let plain = PipelineConfig::new(OperatingPoint::new("plain", Downscale::Full, period, true, false)?);
        let refined = PipelineConfig::new(OperatingPoint::new("refined", Downscale::Full, period, true, true)?);
        let a = process_stream(&seq.frames, &seg, None, &plain)?;
        let b = process_stream(&seq.frames, &seg, Some(&oracle), &refined)?;
        for (x, y) in a.iter().zip(&b) {
            plain_sum[x.hops] += frame_miou(&x.labels, &seq.labels[x.position])?;
            refined_sum[x.hops] += frame_miou(&y.labels, &seq.labels[y.position])?;
            counts[x.hops] += 1;
        }
    }
    for h in 1..period {
        let (p, r) = (plain_sum[h] / counts[h] as f64, refined_sum[h] / counts[h] as f64);
        println!("hop {h}: warped {:.4}, refined {:.4}, recovery {:+.2} points", p, r, 100.0 * (r - p));
    }
    Ok(())
}
