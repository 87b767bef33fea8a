//! Builds the forward-backward inconsistency mask for one frame pair and
//! compares the flagged pixels with the rendered occlusions.

use evs::disflow::{estimate_flow, fast_preset};
use evs::iam::{dilate_and_smooth, round_trip_mask, IamParams, RoundTrip};
use evs::propagation::{mapping_from_flow, remap_labels, TileGrid};
use evs::synthgen::{crossing_scene, generate};

fn main() -> evs::Result<()> {
    let seq = generate(&crossing_scene())?;
    let t = 12;
    let tiles = TileGrid::default();
    let fwd = estimate_flow(&seq.frames[t - 1], &seq.frames[t], &fast_preset())?;
    let bwd = estimate_flow(&seq.frames[t], &seq.frames[t - 1], &fast_preset())?;
    let warped = remap_labels(&seq.labels[t - 1], &mapping_from_flow(&fwd), tiles)?;
    let occ = &seq.occlusions[t];
    let total_occ = occ.weights().iter().filter(|&&w| w > 0.0).count();

    for rt in [RoundTrip::BackwardForward, RoundTrip::ForwardBackward, RoundTrip::Both] {
        let raw = round_trip_mask(&warped, &fwd, &bwd, tiles, rt)?;
        let params = IamParams {
            working_width: raw.width(),
            working_height: raw.height(),
            dilation_radius: 6,
            round_trip: rt,
            ..IamParams::default()
        };
        let smooth = dilate_and_smooth(&raw, &params)?;
        let caught = occ.weights().iter().zip(smooth.weights()).filter(|(o, m)| **o > 0.0 && **m > 0.0).count();
        let flagged = raw.weights().iter().filter(|&&w| w > 0.0).count();
        println!("{rt:?}: {flagged} raw pixels flagged, {caught}/{total_occ} occluded pixels covered after dilation");
    }
    Ok(())
}
