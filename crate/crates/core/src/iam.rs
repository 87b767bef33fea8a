//! Inconsistency attention: flags pixels where forward-propagated labels
//! disagree with their backward-then-forward round trip, grows the flagged
//! region, and uses it to gate a refiner's prediction against the warped
//! one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{FlowField, InconsistencyMask, LabelMap, ProbabilityMap};
use crate::propagation::{mapping_from_flow, remap_labels, TileGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IamParams {
    pub working_width: usize,
    pub working_height: usize,
    pub dilation_radius: usize,
    pub smoothing_sigma: f64,
    #[serde(default)]
    pub round_trip: RoundTrip,
}

/// Which label round trip the forward-warped labels are checked against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundTrip {
    /// Backward warp, then forward warp.
    #[default]
    BackwardForward,
    /// Forward warp, then backward warp.
    ForwardBackward,
    /// Either round trip disagreeing flags the pixel.
    Both,
}

impl Default for IamParams {
    fn default() -> Self {
        Self {
            working_width: 512,
            working_height: 256,
            dilation_radius: 4,
            smoothing_sigma: 2.0,
            round_trip: RoundTrip::default(),
        }
    }
}

impl IamParams {
    pub fn validate(&self) -> Result<()> {
        if self.working_width == 0 || self.working_height == 0 {
            return Err(Error::InvalidParameter(format!(
                "IAM working size {}x{} must be positive",
                self.working_width, self.working_height
            )));
        }
        if !(self.smoothing_sigma >= 0.0) || !self.smoothing_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing_sigma must be a finite non-negative number, got {}",
                self.smoothing_sigma
            )));
        }
        Ok(())
    }

    pub fn working_size(&self) -> (usize, usize) {
        (self.working_width, self.working_height)
    }
}

fn check_same(what: &'static str, left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { what, left, right });
    }
    Ok(())
}

/// `L_BF`: `labels_fwd` warped back to the previous frame with the
/// backward flow, then forward again with the forward flow.
pub fn compute_backforward_labels(
    labels_fwd: &LabelMap,
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    tiles: TileGrid,
) -> Result<LabelMap> {
    check_same("forward flow", flow_fwd.size(), labels_fwd.size())?;
    check_same("backward flow", flow_bwd.size(), labels_fwd.size())?;
    let back = remap_labels(labels_fwd, &mapping_from_flow(flow_bwd), tiles)?;
    remap_labels(&back, &mapping_from_flow(flow_fwd), tiles)
}

/// `labels_fwd` warped forward with the forward flow, then back with the
/// backward flow.
pub fn compute_forwardbackward_labels(
    labels_fwd: &LabelMap,
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    tiles: TileGrid,
) -> Result<LabelMap> {
    check_same("forward flow", flow_fwd.size(), labels_fwd.size())?;
    check_same("backward flow", flow_bwd.size(), labels_fwd.size())?;
    let fwd = remap_labels(labels_fwd, &mapping_from_flow(flow_fwd), tiles)?;
    remap_labels(&fwd, &mapping_from_flow(flow_bwd), tiles)
}

/// Raw mask of `labels_fwd` against the round trip(s) selected by `round_trip`.
pub fn round_trip_mask(
    labels_fwd: &LabelMap,
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    tiles: TileGrid,
    round_trip: RoundTrip,
) -> Result<InconsistencyMask> {
    let bf = || {
        let l = compute_backforward_labels(labels_fwd, flow_fwd, flow_bwd, tiles)?;
        inconsistency_mask(labels_fwd, &l)
    };
    let fb = || {
        let l = compute_forwardbackward_labels(labels_fwd, flow_fwd, flow_bwd, tiles)?;
        inconsistency_mask(labels_fwd, &l)
    };
    match round_trip {
        RoundTrip::BackwardForward => bf(),
        RoundTrip::ForwardBackward => fb(),
        RoundTrip::Both => {
            let (a, b) = (bf()?, fb()?);
            let w = a.weights().iter().zip(b.weights()).map(|(&x, &y)| x.max(y)).collect();
            Ok(InconsistencyMask::from_parts_unchecked(a.width(), a.height(), w))
        }
    }
}

/// 1 where the two label maps disagree, 0 elsewhere.
pub fn inconsistency_mask(labels_fwd: &LabelMap, labels_bf: &LabelMap) -> Result<InconsistencyMask> {
    check_same("round-trip labels", labels_bf.size(), labels_fwd.size())?;
    let weights = labels_fwd
        .labels()
        .iter()
        .zip(labels_bf.labels())
        .map(|(a, b)| if a != b { 1.0 } else { 0.0 })
        .collect();
    Ok(InconsistencyMask::from_parts_unchecked(labels_fwd.width(), labels_fwd.height(), weights))
}

/// Normalized 1-D Gaussian truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Disk dilation of every pixel with positive weight, then a separable
/// Gaussian blur with replicated borders, clamped to `[0, 1]`.
pub fn dilate_and_smooth(mask: &InconsistencyMask, params: &IamParams) -> Result<InconsistencyMask> {
    params.validate()?;
    let (w, h) = mask.size();
    let src = mask.weights();

    let dilated: Vec<f64> = if params.dilation_radius == 0 {
        src.iter().map(|&v| v as f64).collect()
    } else {
        // each disk row is a horizontal span of half-width sqrt(r^2 - dy^2)
        let r = params.dilation_radius as i64;
        let spans: Vec<(i64, i64)> = (-r..=r)
            .map(|dy| {
                let half = ((r * r - dy * dy) as f64).sqrt().floor() as i64;
                (dy, half)
            })
            .collect();
        let mut out = vec![0.0f64; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let mut best = 0.0f32;
                for &(dy, half) in &spans {
                    let sy = y as i64 + dy;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    let lo = (x as i64 - half).max(0) as usize;
                    let hi = ((x as i64 + half) as usize).min(w - 1);
                    let line = &src[sy as usize * w..][lo..=hi];
                    for &v in line {
                        best = best.max(v);
                    }
                }
                *o = best as f64;
            }
        });
        out
    };

    let kernel = gaussian_kernel(params.smoothing_sigma);
    let blurred = if kernel.len() == 1 {
        dilated
    } else {
        separable_blur(&dilated, w, h, &kernel)
    };
    let weights = blurred.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    Ok(InconsistencyMask::from_parts_unchecked(w, h, weights))
}

fn separable_blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0f64; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..][..w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * line[sx];
            }
            *o = acc;
        }
    });
    let mut out = vec![0.0f64; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + k as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            *o = acc;
        }
    });
    out
}

/// `M * P_refiner + (1 - M) * P_warped`, per pixel and class.
pub fn blend(
    refiner: &ProbabilityMap,
    warped: &ProbabilityMap,
    mask: &InconsistencyMask,
) -> Result<ProbabilityMap> {
    check_same("refiner probabilities", refiner.size(), warped.size())?;
    check_same("mask", mask.size(), warped.size())?;
    if refiner.num_classes() != warped.num_classes() {
        return Err(Error::ClassCountMismatch {
            left: refiner.num_classes(),
            right: warped.num_classes(),
        });
    }
    let c = warped.num_classes();
    let mut values = Vec::with_capacity(warped.values().len());
    for ((pr, pw), &m) in refiner
        .values()
        .chunks_exact(c)
        .zip(warped.values().chunks_exact(c))
        .zip(mask.weights())
    {
        if m == 0.0 {
            values.extend_from_slice(pw);
        } else if m == 1.0 {
            values.extend_from_slice(pr);
        } else {
            // b + m(a - b) leaves b untouched wherever a == b
            values.extend(pr.iter().zip(pw).map(|(&a, &b)| b + m * (a - b)));
        }
    }
    Ok(ProbabilityMap::from_parts_unchecked(warped.width(), warped.height(), c, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r: usize, sigma: f64) -> IamParams {
        IamParams {
            dilation_radius: r,
            smoothing_sigma: sigma,
            ..IamParams::default()
        }
    }

    #[test]
    fn identical_maps_give_empty_mask() {
        let l = LabelMap::from_fn(6, 5, 3, 255, |x, y| ((x + y) % 3) as u8).unwrap();
        let m = inconsistency_mask(&l, &l).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn mask_marks_exact_differences() {
        let a = LabelMap::filled(5, 5, 0, 2, 255).unwrap();
        let b = LabelMap::from_fn(5, 5, 2, 255, |x, y| u8::from((x, y) == (1, 1) || (x, y) == (2, 3))).unwrap();
        let m = inconsistency_mask(&a, &b).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expected = if (x, y) == (1, 1) || (x, y) == (2, 3) { 1.0 } else { 0.0 };
                assert_eq!(m.get(x, y), expected);
            }
        }
        let c = LabelMap::filled(5, 5, 1, 2, 255).unwrap();
        assert!(inconsistency_mask(&a, &c).unwrap().weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn mask_requires_equal_sizes() {
        let a = LabelMap::filled(5, 5, 0, 2, 255).unwrap();
        let b = LabelMap::filled(4, 5, 0, 2, 255).unwrap();
        assert!(matches!(inconsistency_mask(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_flows_round_trip_exactly() {
        let l = LabelMap::from_fn(12, 8, 3, 255, |x, y| ((x / 3 + y) % 3) as u8).unwrap();
        let z = FlowField::zeros(12, 8).unwrap();
        assert_eq!(compute_backforward_labels(&l, &z, &z, TileGrid::default()).unwrap(), l);
    }

    #[test]
    fn extremes_are_fixed_points() {
        for v in [0.0, 1.0] {
            let m = InconsistencyMask::filled(20, 11, v).unwrap();
            let out = dilate_and_smooth(&m, &params(4, 2.0)).unwrap();
            assert!(out.weights().iter().all(|&w| w == v), "{v}");
        }
    }

    #[test]
    fn kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn flagged_pixels_stay_above_half() {
        let mut w = vec![0.0f32; 40 * 30];
        w[15 * 40 + 20] = 1.0;
        w[0] = 1.0;
        let m = InconsistencyMask::new(40, 30, w).unwrap();
        let out = dilate_and_smooth(&m, &IamParams::default()).unwrap();
        assert!(out.get(20, 15) >= 0.5);
        assert!(out.get(0, 0) >= 0.5);
    }

    #[test]
    fn blend_extremes_and_midpoint() {
        let a = ProbabilityMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let b = ProbabilityMap::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let zero = InconsistencyMask::filled(1, 1, 0.0).unwrap();
        let one = InconsistencyMask::filled(1, 1, 1.0).unwrap();
        let half = InconsistencyMask::filled(1, 1, 0.5).unwrap();
        assert_eq!(blend(&a, &b, &zero).unwrap(), b);
        assert_eq!(blend(&a, &b, &one).unwrap(), a);
        assert_eq!(blend(&a, &b, &half).unwrap().values(), &[0.5, 0.5]);
    }

    #[test]
    fn blend_rejects_mismatches() {
        let a = ProbabilityMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let b = ProbabilityMap::new(1, 1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let m = InconsistencyMask::filled(1, 1, 0.5).unwrap();
        assert!(matches!(blend(&a, &b, &m), Err(Error::ClassCountMismatch { .. })));
        let m2 = InconsistencyMask::filled(2, 1, 0.5).unwrap();
        assert!(matches!(blend(&a, &a, &m2), Err(Error::DimensionMismatch { .. })));
    }
}
