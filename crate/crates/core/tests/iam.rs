use evs::iam::{
    blend, compute_backforward_labels, compute_forwardbackward_labels, dilate_and_smooth, inconsistency_mask,
    round_trip_mask, IamParams, RoundTrip,
};
use evs::imagery::{FlowField, InconsistencyMask, LabelMap, ProbabilityMap};
use evs::propagation::TileGrid;
use proptest::prelude::*;

/// Disk max over `dx^2 + dy^2 <= r^2`, then a full 2-D Gaussian sum with
/// replicated borders, clamped to `[0, 1]`.
fn reference_dilate_smooth(src: &[f32], w: usize, h: usize, r: usize, sigma: f64) -> Vec<f64> {
    let r = r as i64;
    let mut dilated = vec![0.0f64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut best = 0.0f64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r && sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                        best = best.max(src[(sy * w as i64 + sx) as usize] as f64);
                    }
                }
            }
            dilated[(y * w as i64 + x) as usize] = best;
        }
    }
    if sigma == 0.0 {
        return dilated;
    }
    let k = (3.0 * sigma).ceil() as i64;
    let g: Vec<f64> = (-k..=k).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let mut out = vec![0.0f64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for j in -k..=k {
                for i in -k..=k {
                    let sx = (x + i).clamp(0, w as i64 - 1);
                    let sy = (y + j).clamp(0, h as i64 - 1);
                    acc += g[(i + k) as usize] * g[(j + k) as usize] * dilated[(sy * w as i64 + sx) as usize];
                }
            }
            out[(y * w as i64 + x) as usize] = (acc / norm).clamp(0.0, 1.0);
        }
    }
    out
}

fn params(r: usize, sigma: f64) -> IamParams {
    IamParams {
        dilation_radius: r,
        smoothing_sigma: sigma,
        ..IamParams::default()
    }
}

fn distribution(values: Vec<f64>, c: usize) -> Vec<f32> {
    values
        .chunks(c)
        .flat_map(|px| {
            let s: f64 = px.iter().sum();
            px.iter().map(move |v| (v / s) as f32).collect::<Vec<_>>()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, ..ProptestConfig::default() })]

    #[test]
    fn mask_is_label_disagreement(
        (w, h, a, b) in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| (
            Just(w), Just(h),
            prop::collection::vec(0u8..4, w * h),
            prop::collection::vec(0u8..4, w * h),
        ))
    ) {
        let la = LabelMap::new(w, h, a.clone(), 4, 255).unwrap();
        let lb = LabelMap::new(w, h, b.clone(), 4, 255).unwrap();
        let m = inconsistency_mask(&la, &lb).unwrap();
        for i in 0..w * h {
            prop_assert_eq!(m.weights()[i], if a[i] == b[i] { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn blend_is_convex_combination(
        (w, h, c, pa, pb, m) in (1usize..8, 1usize..8, 2usize..5).prop_flat_map(|(w, h, c)| (
            Just(w), Just(h), Just(c),
            prop::collection::vec(0.001f64..1.0, w * h * c),
            prop::collection::vec(0.001f64..1.0, w * h * c),
            prop::collection::vec(0.0f32..=1.0, w * h),
        ))
    ) {
        let refined = ProbabilityMap::new(w, h, c, distribution(pa, c)).unwrap();
        let warped = ProbabilityMap::new(w, h, c, distribution(pb, c)).unwrap();
        let out = blend(&refined, &warped, &InconsistencyMask::new(w, h, m.clone()).unwrap()).unwrap();
        for p in 0..w * h {
            let mut sum = 0.0;
            for k in 0..c {
                let i = p * c + k;
                let want = m[p] as f64 * refined.values()[i] as f64 + (1.0 - m[p] as f64) * warped.values()[i] as f64;
                prop_assert!((out.values()[i] as f64 - want).abs() <= 1e-6);
                sum += out.values()[i] as f64;
            }
            prop_assert!((sum - 1.0).abs() <= 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn dilation_and_blur_match_brute_force(
        (w, h, bits) in (1usize..20, 1usize..20).prop_flat_map(|(w, h)| (
            Just(w), Just(h), prop::collection::vec(prop::bool::weighted(0.1), w * h),
        )),
        r in 0usize..5,
        sigma in prop_oneof![Just(0.0f64), 0.3f64..2.5],
    ) {
        let raw: Vec<f32> = bits.iter().map(|&b| b as u8 as f32).collect();
        let mask = InconsistencyMask::new(w, h, raw.clone()).unwrap();
        let got = dilate_and_smooth(&mask, &params(r, sigma)).unwrap();
        let want = reference_dilate_smooth(&raw, w, h, r, sigma);
        for (g, e) in got.weights().iter().zip(&want) {
            prop_assert!((*g as f64 - e).abs() <= 1e-6, "got {} want {}", g, e);
        }
    }
}

#[test]
fn blend_endpoints_copy_inputs_exactly() {
    let a = ProbabilityMap::new(2, 1, 3, vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8]).unwrap();
    let b = ProbabilityMap::new(2, 1, 3, vec![0.7, 0.2, 0.1, 0.3, 0.3, 0.4]).unwrap();
    let out = blend(&a, &b, &InconsistencyMask::new(2, 1, vec![1.0, 0.0]).unwrap()).unwrap();
    assert_eq!(&out.values()[..3], &a.values()[..3]);
    assert_eq!(&out.values()[3..], &b.values()[3..]);
}

fn stripes(w: usize, h: usize) -> LabelMap {
    LabelMap::from_fn(w, h, 3, 255, |x, _| ((x / 5) % 3) as u8).unwrap()
}

#[test]
fn consistent_uniform_motion_flags_only_the_border() {
    let (w, h) = (40, 12);
    let labels = stripes(w, h);
    let fwd = FlowField::uniform(w, h, 2.0, 0.0).unwrap();
    let bwd = FlowField::uniform(w, h, -2.0, 0.0).unwrap();
    let tiles = TileGrid::default();
    for rt in [RoundTrip::BackwardForward, RoundTrip::ForwardBackward, RoundTrip::Both] {
        let m = round_trip_mask(&labels, &fwd, &bwd, tiles, rt).unwrap();
        for y in 0..h {
            for x in 3..w - 3 {
                assert_eq!(m.get(x, y), 0.0, "{rt:?} at ({x}, {y})");
            }
        }
    }
}

#[test]
fn both_round_trips_flag_the_union() {
    let (w, h) = (30, 6);
    let labels = stripes(w, h);
    // a flow with a discontinuity makes the two round trips disagree in
    // different places
    let fwd = FlowField::from_fn(w, h, |x, _| (if x < 15 { 3.0 } else { 0.0 }, 0.0)).unwrap();
    let bwd = FlowField::from_fn(w, h, |x, _| (if x < 18 { -3.0 } else { 0.0 }, 0.0)).unwrap();
    let tiles = TileGrid::single();
    let bf = inconsistency_mask(&labels, &compute_backforward_labels(&labels, &fwd, &bwd, tiles).unwrap()).unwrap();
    let fb = inconsistency_mask(&labels, &compute_forwardbackward_labels(&labels, &fwd, &bwd, tiles).unwrap()).unwrap();
    let both = round_trip_mask(&labels, &fwd, &bwd, tiles, RoundTrip::Both).unwrap();
    for i in 0..w * h {
        assert_eq!(both.weights()[i], bf.weights()[i].max(fb.weights()[i]));
    }
    assert_eq!(round_trip_mask(&labels, &fwd, &bwd, tiles, RoundTrip::default()).unwrap(), bf);
}

#[test]
fn flow_of_the_wrong_size_is_rejected() {
    let labels = stripes(10, 4);
    let good = FlowField::zeros(10, 4).unwrap();
    let bad = FlowField::zeros(9, 4).unwrap();
    assert!(compute_backforward_labels(&labels, &good, &bad, TileGrid::single()).is_err());
    assert!(compute_backforward_labels(&labels, &bad, &good, TileGrid::single()).is_err());
}

#[test]
fn invalid_smoothing_is_rejected() {
    let mask = InconsistencyMask::filled(4, 4, 0.0).unwrap();
    assert!(dilate_and_smooth(&mask, &params(1, -1.0)).is_err());
    assert!(dilate_and_smooth(&mask, &params(1, f64::NAN)).is_err());
}
