//! Deterministic synthetic sequences with exact ground truth.
//!
//! A scene is a value-noise textured background plus translating
//! rectangles and disks drawn back to front (later objects on top). For
//! every frame the generator knows which surface is visible at each pixel,
//! which gives exact labels, per-pixel motion and occlusion masks.

mod suites;

pub use suites::{
    crossing_scene, occlusion_suite, propagation_suite, smooth_motion_suite, translation_scene,
    translation_suite, SUITE_PALETTE,
};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{
    write_flo, write_frame, write_label_png, write_mask_png, ClassId, FlowField, Frame,
    InconsistencyMask, LabelMap, DEFAULT_IGNORE_ID,
};
use crate::segmentation::{PaletteEntry, PaletteSegmenter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rectangle { width: f64, height: f64 },
    Disk { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub class_id: ClassId,
    pub color: [u8; 3],
    pub texture_seed: u64,
    /// Pan of the whole background, pixels per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub class_id: ClassId,
    pub color: [u8; 3],
    /// Top-left corner for rectangles, centre for disks, at frame 0.
    pub start: [f64; 2],
    /// Pixels per frame.
    pub velocity: [f64; 2],
    pub texture_seed: u64,
}

fn default_amplitude() -> f64 {
    24.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub seed: u64,
    /// Brightness swing of the texture around each surface colour.
    #[serde(default = "default_amplitude")]
    pub texture_amplitude: f64,
    pub background: Background,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Permit non-integer velocities (ground-truth warps are then no
    /// longer pixel exact).
    #[serde(default)]
    pub allow_fractional: bool,
}

fn scene_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Scene {
        field: field.into(),
        message: message.into(),
    }
}

fn color_distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(scene_err("width", "must be positive"));
        }
        if self.height == 0 {
            return Err(scene_err("height", "must be positive"));
        }
        if self.frame_count == 0 {
            return Err(scene_err("frame_count", "must be positive"));
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude <= 127.0) {
            return Err(scene_err("texture_amplitude", "must lie in [0, 127]"));
        }
        let check_velocity = |field: String, v: [f64; 2]| -> Result<()> {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(scene_err(field, "velocity must be finite"));
            }
            if !self.allow_fractional && v.iter().any(|c| c.fract() != 0.0) {
                return Err(scene_err(field, "velocity must be integral unless allow_fractional is set"));
            }
            Ok(())
        };
        check_velocity("background.velocity".into(), self.background.velocity)?;
        if self.background.class_id == DEFAULT_IGNORE_ID {
            return Err(scene_err("background.class_id", "collides with the ignore id"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let at = |f: &str| format!("objects[{i}].{f}");
            check_velocity(at("velocity"), o.velocity)?;
            if o.start.iter().any(|c| !c.is_finite()) {
                return Err(scene_err(at("start"), "must be finite"));
            }
            if o.class_id == self.background.class_id {
                return Err(scene_err(at("class_id"), "must differ from the background class"));
            }
            if o.class_id == DEFAULT_IGNORE_ID {
                return Err(scene_err(at("class_id"), "collides with the ignore id"));
            }
            let (w, h) = match o.shape {
                Shape::Rectangle { width, height } => (width, height),
                Shape::Disk { radius } => (2.0 * radius, 2.0 * radius),
            };
            if !(w > 0.0 && h > 0.0) {
                return Err(scene_err(at("shape"), "extent must be positive"));
            }
            if w > self.width as f64 || h > self.height as f64 {
                return Err(scene_err(
                    at("shape"),
                    format!("{w}x{h} object is larger than the {}x{} canvas", self.width, self.height),
                ));
            }
        }
        // palette recoverability: one colour per class, classes far enough
        // apart that texture never pushes a pixel nearer another class
        let palette = self.palette_entries()?;
        let max_shift = self.texture_amplitude * 3f64.sqrt();
        for (i, a) in palette.iter().enumerate() {
            for b in &palette[i + 1..] {
                if color_distance(a.color, b.color) <= 2.0 * max_shift {
                    return Err(scene_err(
                        "objects",
                        format!(
                            "colours of classes {} and {} are closer than twice the texture swing",
                            a.class_id, b.class_id
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    fn palette_entries(&self) -> Result<Vec<PaletteEntry>> {
        let mut entries = vec![PaletteEntry {
            color: self.background.color,
            class_id: self.background.class_id,
        }];
        for (i, o) in self.objects.iter().enumerate() {
            match entries.iter().find(|e| e.class_id == o.class_id) {
                Some(e) if e.color != o.color => {
                    return Err(scene_err(
                        format!("objects[{i}].color"),
                        format!("class {} already uses colour {:?}", o.class_id, e.color),
                    ))
                }
                Some(_) => {}
                None => entries.push(PaletteEntry {
                    color: o.color,
                    class_id: o.class_id,
                }),
            }
        }
        entries.sort_by_key(|e| e.class_id);
        Ok(entries)
    }

    /// One entry per class present in the scene.
    pub fn palette(&self) -> Vec<PaletteEntry> {
        self.palette_entries().expect("validated scene")
    }

    pub fn num_classes(&self) -> usize {
        self.palette().iter().map(|e| e.class_id as usize + 1).max().unwrap_or(1)
    }

    /// Palette segmenter that reproduces this scene's labels at frame
    /// resolution.
    pub fn palette_segmenter(&self) -> Result<PaletteSegmenter> {
        Ok(PaletteSegmenter::new(self.palette(), 60.0)?
            .with_prediction_size(self.width, self.height)
            .with_feature_size((self.width / 4).max(1), (self.height / 4).max(1)))
    }

    fn object_origin(&self, i: usize, t: usize) -> (f64, f64) {
        let o = &self.objects[i];
        (o.start[0] + t as f64 * o.velocity[0], o.start[1] + t as f64 * o.velocity[1])
    }

    fn covers(&self, i: usize, t: usize, cx: f64, cy: f64) -> bool {
        let (ox, oy) = self.object_origin(i, t);
        match self.objects[i].shape {
            Shape::Rectangle { width, height } => cx >= ox && cx < ox + width && cy >= oy && cy < oy + height,
            Shape::Disk { radius } => (cx - ox).powi(2) + (cy - oy).powi(2) <= radius * radius,
        }
    }

    /// Visible surface at pixel `(x, y)` of frame `t`: 0 for the
    /// background, `i + 1` for object `i`.
    pub fn surface_at(&self, t: usize, x: usize, y: usize) -> usize {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        (0..self.objects.len())
            .rev()
            .find(|&i| self.covers(i, t, cx, cy))
            .map_or(0, |i| i + 1)
    }

    fn surface_velocity(&self, s: usize) -> [f64; 2] {
        if s == 0 {
            self.background.velocity
        } else {
            self.objects[s - 1].velocity
        }
    }

    fn surface_class(&self, s: usize) -> ClassId {
        if s == 0 {
            self.background.class_id
        } else {
            self.objects[s - 1].class_id
        }
    }

    fn surface_color(&self, s: usize, t: usize, x: usize, y: usize) -> [u8; 3] {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        let (base, seed, u, v) = if s == 0 {
            let b = &self.background;
            (b.color, b.texture_seed, cx - t as f64 * b.velocity[0], cy - t as f64 * b.velocity[1])
        } else {
            let (ox, oy) = self.object_origin(s - 1, t);
            let o = &self.objects[s - 1];
            (o.color, o.texture_seed, cx - ox, cy - oy)
        };
        let shift = self.texture_amplitude * value_noise(u, v, seed ^ self.seed.rotate_left(17));
        base.map(|c| (c as f64 + shift).round().clamp(0.0, 255.0) as u8)
    }

    fn surface_map(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.surface_at(t, x, y));
            }
        }
        out
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn lattice_noise(u: f64, v: f64, cell: f64, seed: u64) -> f64 {
    let (fu, fv) = (u / cell, v / cell);
    let (iu, iv) = (fu.floor(), fv.floor());
    let (tu, tv) = (fu - iu, fv - iv);
    let (su, sv) = (tu * tu * (3.0 - 2.0 * tu), tv * tv * (3.0 - 2.0 * tv));
    let (iu, iv) = (iu as i64, iv as i64);
    let a = hash2(iu, iv, seed);
    let b = hash2(iu + 1, iv, seed);
    let c = hash2(iu, iv + 1, seed);
    let d = hash2(iu + 1, iv + 1, seed);
    let top = a + (b - a) * su;
    let bottom = c + (d - c) * su;
    top + (bottom - top) * sv
}

/// Three-octave value noise in `[-1, 1]`.
pub fn value_noise(u: f64, v: f64, seed: u64) -> f64 {
    const OCTAVES: [(f64, f64); 3] = [(24.0, 0.5), (9.0, 0.3), (4.0, 0.2)];
    OCTAVES
        .iter()
        .enumerate()
        .map(|(k, &(cell, weight))| weight * lattice_noise(u, v, cell, seed.wrapping_add(k as u64 * 0x1000_0001)))
        .sum()
}

/// Generated frames with their exact ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub spec: SceneSpec,
    pub frames: Vec<Frame>,
    pub labels: Vec<LabelMap>,
    /// `flows[t]` moves frame `t` onto frame `t + 1`, indexed by pixels
    /// of frame `t`.
    pub flows: Vec<FlowField>,
    /// Pixels of frame `t` that are newly revealed or about to be
    /// covered relative to frame `t - 1`; empty for frame 0.
    pub occlusions: Vec<InconsistencyMask>,
    surfaces: Vec<Vec<usize>>,
}

impl SyntheticSequence {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    /// Motion of the surface visible at each pixel of frame `t`, i.e. the
    /// displacement that brought it there from frame `t - 1`. Warping
    /// `labels[t - 1]` by this field reproduces `labels[t]` outside the
    /// occlusion mask.
    pub fn arrival_motion(&self, t: usize) -> FlowField {
        let s = &self.surfaces[t];
        FlowField::from_fn(self.spec.width, self.spec.height, |x, y| {
            let v = self.spec.surface_velocity(s[y * self.spec.width + x]);
            (v[0] as f32, v[1] as f32)
        })
        .expect("scene dimensions are positive")
    }

    pub fn surface_map(&self, t: usize) -> &[usize] {
        &self.surfaces[t]
    }

    /// Writes `frame_%06d.png`, `gt/label_%06d.png`, `flow/flow_%06d.flo`,
    /// `occlusion/occ_%06d.png` and `scene.json` under `out`.
    pub fn write_to(&self, out: impl AsRef<Path>) -> Result<()> {
        let out = out.as_ref();
        for sub in ["gt", "flow", "occlusion"] {
            fs::create_dir_all(out.join(sub)).map_err(|e| Error::file(out.join(sub), e.to_string()))?;
        }
        for (t, frame) in self.frames.iter().enumerate() {
            write_frame(out.join(format!("frame_{t:06}.png")), frame)?;
            write_label_png(out.join("gt").join(format!("label_{t:06}.png")), &self.labels[t])?;
            write_mask_png(out.join("occlusion").join(format!("occ_{t:06}.png")), &self.occlusions[t])?;
        }
        for (t, flow) in self.flows.iter().enumerate() {
            write_flo(out.join("flow").join(format!("flow_{t:06}.flo")), flow)?;
        }
        let scene = out.join("scene.json");
        fs::write(&scene, self.spec.to_json() + "\n").map_err(|e| Error::file(&scene, e.to_string()))?;
        Ok(())
    }
}

/// Frame pattern of generated sequences.
pub const FRAME_PATTERN: &str = "frame_%06d.png";
/// Label pattern inside the `gt/` directory.
pub const LABEL_PATTERN: &str = "label_%06d.png";

pub fn generate(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let num_classes = spec.num_classes();
    let surfaces: Vec<Vec<usize>> = (0..spec.frame_count).into_par_iter().map(|t| spec.surface_map(t)).collect();

    let frames = (0..spec.frame_count)
        .into_par_iter()
        .map(|t| {
            let s = &surfaces[t];
            Frame::from_fn(w, h, t as u64, |x, y| spec.surface_color(s[y * w + x], t, x, y))
        })
        .collect::<Result<Vec<_>>>()?;

    let labels = surfaces
        .iter()
        .map(|s| {
            let ids = s.iter().map(|&id| spec.surface_class(id)).collect();
            LabelMap::new(w, h, ids, num_classes, DEFAULT_IGNORE_ID)
        })
        .collect::<Result<Vec<_>>>()?;

    let flows = surfaces[..spec.frame_count - 1]
        .iter()
        .map(|s| {
            FlowField::from_fn(w, h, |x, y| {
                let v = spec.surface_velocity(s[y * w + x]);
                (v[0] as f32, v[1] as f32)
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut occlusions = vec![InconsistencyMask::filled(w, h, 0.0)?];
    for t in 1..spec.frame_count {
        occlusions.push(occlusion_between(spec, &surfaces[t - 1], &surfaces[t]));
    }

    Ok(SyntheticSequence {
        spec: spec.clone(),
        frames,
        labels,
        flows,
        occlusions,
        surfaces,
    })
}

fn occlusion_between(spec: &SceneSpec, prev: &[usize], cur: &[usize]) -> InconsistencyMask {
    let (w, h) = (spec.width, spec.height);
    let lookup = |map: &[usize], x: f64, y: f64| -> Option<usize> {
        let (xi, yi) = (x.round(), y.round());
        (xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h).then(|| map[yi as usize * w + xi as usize])
    };
    let mut weights = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // revealed: the visible surface was hidden at its previous spot
            let s = cur[i];
            let v = spec.surface_velocity(s);
            let revealed = lookup(prev, x as f64 - v[0], y as f64 - v[1]).is_some_and(|p| p != s);
            // covered: the previous surface is hidden at its new spot
            let sp = prev[i];
            let vp = spec.surface_velocity(sp);
            let covered = lookup(cur, x as f64 + vp[0], y as f64 + vp[1]).is_some_and(|c| c != sp);
            if revealed || covered {
                weights[i] = 1.0;
            }
        }
    }
    InconsistencyMask::from_parts_unchecked(w, h, weights)
}
