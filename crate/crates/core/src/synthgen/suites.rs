//! Canned scenes used by the tests, examples and `evs synth --suite`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Background, SceneObject, SceneSpec, Shape};

/// Class colours shared by the canned scenes. Pairwise distances exceed
/// twice the default texture swing, so the palette segmenter recovers
/// labels exactly.
pub const SUITE_PALETTE: [[u8; 3]; 5] = [[70, 70, 70], [200, 60, 60], [60, 200, 60], [60, 60, 200], [210, 200, 70]];

const WIDTH: usize = 256;
const HEIGHT: usize = 128;

fn background(texture_seed: u64, velocity: [f64; 2]) -> Background {
    Background {
        class_id: 0,
        color: SUITE_PALETTE[0],
        texture_seed,
        velocity,
    }
}

fn rectangle(class_id: u8, width: f64, height: f64, start: [f64; 2], velocity: [f64; 2], texture_seed: u64) -> SceneObject {
    SceneObject {
        shape: Shape::Rectangle { width, height },
        class_id,
        color: SUITE_PALETTE[class_id as usize],
        start,
        velocity,
        texture_seed,
    }
}

/// Two rectangles crossing in opposite directions over a static
/// background; the occluded band changes every frame.
pub fn crossing_scene() -> SceneSpec {
    SceneSpec {
        width: WIDTH,
        height: HEIGHT,
        frame_count: 30,
        seed: 7,
        texture_amplitude: 24.0,
        background: background(11, [0.0, 0.0]),
        objects: vec![
            rectangle(1, 60.0, 40.0, [20.0, 30.0], [3.0, 0.0], 21),
            rectangle(2, 50.0, 50.0, [180.0, 50.0], [-3.0, 0.0], 22),
        ],
        allow_fractional: false,
    }
}

/// Whole-scene pan: background and objects share one velocity, so the
/// true flow is uniform.
pub fn translation_scene(vx: i32, vy: i32) -> SceneSpec {
    let v = [vx as f64, vy as f64];
    SceneSpec {
        width: WIDTH,
        height: HEIGHT,
        frame_count: 6,
        seed: 100 + (vx + 16) as u64 * 64 + (vy + 16) as u64,
        texture_amplitude: 24.0,
        background: background(31, v),
        objects: vec![
            rectangle(1, 48.0, 32.0, [60.0, 30.0], v, 32),
            SceneObject {
                shape: Shape::Disk { radius: 18.0 },
                class_id: 3,
                color: SUITE_PALETTE[3],
                start: [170.0, 70.0],
                velocity: v,
                texture_seed: 33,
            },
        ],
        allow_fractional: false,
    }
}

/// Pans with velocities up to 6 px per frame in assorted directions.
pub fn translation_suite() -> Vec<SceneSpec> {
    [(1, 0), (0, 1), (2, -1), (-3, 2), (4, 4), (-4, -4), (6, 0), (0, -6), (-5, 3)]
        .iter()
        .map(|&(vx, vy)| translation_scene(vx, vy))
        .collect()
}

/// Gentle motion: slow pans with objects drifting by at most one pixel
/// per frame relative to the background.
pub fn smooth_motion_suite() -> Vec<SceneSpec> {
    [([1.0, 0.0], [1.0, 0.0]), ([0.0, 1.0], [0.0, 1.0]), ([0.0, 0.0], [1.0, 0.0]), ([1.0, 1.0], [1.0, 1.0])]
        .iter()
        .enumerate()
        .map(|(i, &(bg, obj))| {
            let mut spec = translation_scene(0, 0);
            spec.seed = 500 + i as u64;
            spec.frame_count = 10;
            spec.background.velocity = bg;
            for o in &mut spec.objects {
                o.velocity = obj;
            }
            spec
        })
        .collect()
}

/// Crossing variants: the canonical scene plus vertical and diagonal
/// crossings at other speeds.
pub fn occlusion_suite() -> Vec<SceneSpec> {
    let mut vertical = crossing_scene();
    vertical.seed = 8;
    vertical.frame_count = 16;
    vertical.objects = vec![
        rectangle(3, 90.0, 30.0, [40.0, 4.0], [0.0, 4.0], 41),
        rectangle(4, 70.0, 36.0, [70.0, 90.0], [2.0, -3.0], 42),
    ];
    let mut diagonal = crossing_scene();
    diagonal.seed = 9;
    diagonal.frame_count = 16;
    diagonal.objects = vec![
        rectangle(1, 40.0, 40.0, [10.0, 10.0], [5.0, 2.0], 43),
        SceneObject {
            shape: Shape::Disk { radius: 26.0 },
            class_id: 2,
            color: SUITE_PALETTE[2],
            start: [220.0, 90.0],
            velocity: [-4.0, -2.0],
            texture_seed: 44,
        },
    ];
    vec![crossing_scene(), vertical, diagonal]
}

/// `count` random scenes of 2 to 4 moving objects over a static or
/// slowly panning background, reproducible from `seed`.
pub fn propagation_suite(count: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let bg_v = if rng.random_bool(0.5) {
                [0.0, 0.0]
            } else {
                [rng.random_range(-1..=1) as f64, rng.random_range(-1..=1) as f64]
            };
            let n = rng.random_range(2..=4);
            let objects = (0..n)
                .map(|_| {
                    let class_id = rng.random_range(1..=4u8);
                    let velocity = [rng.random_range(-4..=4) as f64, rng.random_range(-3..=3) as f64];
                    let texture_seed = rng.random();
                    if rng.random_bool(0.3) {
                        let radius = rng.random_range(10..=28) as f64;
                        let start = [rng.random_range(30..226) as f64, rng.random_range(30..98) as f64];
                        SceneObject {
                            shape: Shape::Disk { radius },
                            class_id,
                            color: SUITE_PALETTE[class_id as usize],
                            start,
                            velocity,
                            texture_seed,
                        }
                    } else {
                        let w = rng.random_range(24..=80) as f64;
                        let h = rng.random_range(16..=60) as f64;
                        let start = [rng.random_range(0..(WIDTH as i64 - w as i64)) as f64, rng.random_range(0..(HEIGHT as i64 - h as i64)) as f64];
                        rectangle(class_id, w, h, start, velocity, texture_seed)
                    }
                })
                .collect();
            SceneSpec {
                width: WIDTH,
                height: HEIGHT,
                frame_count: 10,
                seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
                texture_amplitude: 24.0,
                background: background(rng.random(), bg_v),
                objects,
                allow_fractional: false,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canned_scenes_validate() {
        crossing_scene().validate().unwrap();
        for s in translation_suite()
            .into_iter()
            .chain(smooth_motion_suite())
            .chain(occlusion_suite())
            .chain(propagation_suite(20, 1))
        {
            s.validate().unwrap();
        }
    }

    #[test]
    fn propagation_suite_is_reproducible() {
        assert_eq!(propagation_suite(5, 42), propagation_suite(5, 42));
        assert_ne!(propagation_suite(5, 42), propagation_suite(5, 43));
    }
}
