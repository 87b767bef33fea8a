use super::{check_dims, Frame, ProbabilityMap};
use crate::error::Result;

/// Box-filter weights along one axis: destination cell `i` covers the
/// source interval `[i * src / dst, (i + 1) * src / dst)`, and each
/// overlapping source cell contributes its overlap length, normalized.
pub fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 1e-12).then_some((s, overlap))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Area resize of a raw `HWC` buffer, accumulated in `f64`.
pub(crate) fn resize_area_channels(
    src: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    let wx = area_weights(width, new_width);
    let wy = area_weights(height, new_height);
    // horizontal pass
    let mut tmp = vec![0.0f64; new_width * height * channels];
    for y in 0..height {
        for (x, taps) in wx.iter().enumerate() {
            let out = &mut tmp[(y * new_width + x) * channels..][..channels];
            for &(sx, w) in taps {
                let px = &src[(y * width + sx) * channels..][..channels];
                for (o, &v) in out.iter_mut().zip(px) {
                    *o += w * v as f64;
                }
            }
        }
    }
    let mut out = vec![0.0f64; new_width * new_height * channels];
    for (y, taps) in wy.iter().enumerate() {
        for &(sy, w) in taps {
            let src_row = &tmp[sy * new_width * channels..][..new_width * channels];
            let dst_row = &mut out[y * new_width * channels..][..new_width * channels];
            for (o, &v) in dst_row.iter_mut().zip(src_row) {
                *o += w * v;
            }
        }
    }
    out
}

/// Area-average resize of an RGB frame, rounding to nearest.
pub fn resize_area_frame(frame: &Frame, new_width: usize, new_height: usize) -> Result<Frame> {
    check_dims(new_width, new_height)?;
    if (new_width, new_height) == frame.size() {
        return Ok(frame.clone());
    }
    let src: Vec<f32> = frame.samples().iter().map(|&v| v as f32).collect();
    let out = resize_area_channels(&src, frame.width(), frame.height(), 3, new_width, new_height);
    let samples = out.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    Frame::new(new_width, new_height, samples, frame.index())
}

/// Per-channel area average followed by per-pixel renormalization.
pub fn resize_area_probabilities(
    probs: &ProbabilityMap,
    new_width: usize,
    new_height: usize,
) -> Result<ProbabilityMap> {
    check_dims(new_width, new_height)?;
    if (new_width, new_height) == probs.size() {
        return Ok(probs.clone());
    }
    let c = probs.num_classes();
    let out = resize_area_channels(probs.values(), probs.width(), probs.height(), c, new_width, new_height);
    let mut values = Vec::with_capacity(out.len());
    for px in out.chunks_exact(c) {
        let sum: f64 = px.iter().sum();
        values.extend(px.iter().map(|&v| (v / sum) as f32));
    }
    Ok(ProbabilityMap::from_parts_unchecked(new_width, new_height, c, values))
}
