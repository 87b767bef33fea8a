//! Renders the bundled crossing scene and writes it with ground truth.
//!
//! `cargo run --example synth_sequence -- [OUT_DIR]`

use evs::synthgen::{crossing_scene, generate};

fn main() -> evs::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/crossing".into());
    let spec = crossing_scene();
    let seq = generate(&spec)?;
    seq.write_to(&out)?;
    let occluded: f64 = seq.occlusions.iter().map(|m| m.weights().iter().map(|&w| w as f64).sum::<f64>()).sum();
    println!(
        "{} frames of {}x{} with {} classes written to {out}",
        seq.frames.len(),
        spec.width,
        spec.height,
        seq.num_classes()
    );
    println!("{occluded} occluded pixels over the sequence");
    Ok(())
}
