//! PNG frames and label maps, Middlebury `.flo` flow, and the flat
//! little-endian containers for probabilities and features.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};

use super::{ClassId, FeatureMap, FlowField, Frame, InconsistencyMask, LabelMap, ProbabilityMap};
use crate::error::{Error, Result};

pub const FLO_MAGIC: [u8; 4] = *b"PIEH";
pub const PROBABILITY_MAGIC: [u8; 4] = *b"EVSP";
pub const FEATURE_MAGIC: [u8; 4] = *b"EVSF";

/// Filename template with one zero-padded `%0Nd` index placeholder,
/// e.g. `frame_%06d.png`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    digits: usize,
    suffix: String,
}

impl FramePattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let bad = || Error::BadPattern(pattern.to_string());
        let start = pattern.find('%').ok_or_else(bad)?;
        let rest = &pattern[start + 1..];
        let d = rest.find('d').ok_or_else(bad)?;
        let spec = &rest[..d];
        let digits = if spec.is_empty() {
            1
        } else {
            if !spec.starts_with('0') {
                return Err(bad());
            }
            spec[1..].parse::<usize>().map_err(|_| bad())?
        };
        let suffix = &rest[d + 1..];
        if suffix.contains('%') || digits == 0 {
            return Err(bad());
        }
        Ok(Self {
            prefix: pattern[..start].to_string(),
            digits,
            suffix: suffix.to_string(),
        })
    }

    pub fn format(&self, index: u64) -> String {
        format!("{}{:0width$}{}", self.prefix, index, self.suffix, width = self.digits)
    }

    /// Index encoded in `name`, if the name matches the template.
    pub fn match_name(&self, name: &str) -> Option<u64> {
        let body = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if body.len() < self.digits || !body.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        body.parse().ok()
    }
}

/// Loads every file in `dir` matching `pattern`, sorted by index.
pub fn load_frame_sequence(dir: impl AsRef<Path>, pattern: &str) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    let pattern_parsed = FramePattern::parse(pattern)?;
    if !dir.is_dir() {
        return Err(Error::file(dir, "directory does not exist"));
    }
    let mut entries: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e.to_string()))? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(index) = name.to_str().and_then(|n| pattern_parsed.match_name(n)) {
            entries.push((index, entry.path()));
        }
    }
    if entries.is_empty() {
        return Err(Error::NoFramesMatched {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    entries.sort();
    let mut frames = Vec::with_capacity(entries.len());
    for (index, path) in entries {
        let frame = read_frame(&path)?.with_index(index);
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.size() != frame.size() {
                return Err(Error::MixedDimensions {
                    path,
                    found: frame.size(),
                    expected: first.size(),
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::file(path, e.to_string()))?
        .with_guessed_format()
        .map_err(|e| Error::file(path, e.to_string()))?
        .decode()
        .map_err(|e| Error::file(path, format!("unreadable image: {e}")))
}

/// Reads an 8-bit RGB frame with index 0.
pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = open_image(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(w as usize, h as usize, img.into_raw(), 0)
}

pub fn write_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, frame.samples().to_vec())
        .expect("frame buffer length is validated");
    img.save(path).map_err(|e| Error::file(path, e.to_string()))
}

/// Reads a single-channel PNG of raw class ids.
pub fn read_label_png(path: impl AsRef<Path>, num_classes: usize, ignore_id: ClassId) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = open_image(path)?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::file(path, format!("expected 8-bit grayscale labels, found {:?}", img.color())));
    }
    let img = img.into_luma8();
    let (w, h) = img.dimensions();
    LabelMap::new(w as usize, h as usize, img.into_raw(), num_classes, ignore_id).map_err(|e| Error::file(path, e.to_string()))
}

pub fn write_label_png(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.labels().to_vec())
        .expect("label buffer length is validated");
    img.save(path).map_err(|e| Error::file(path, e.to_string()))
}

/// Mask as 8-bit grayscale, `round(weight * 255)`.
pub fn write_mask_png(path: impl AsRef<Path>, mask: &InconsistencyMask) -> Result<()> {
    let path = path.as_ref();
    let raw = mask.weights().iter().map(|&w| (w * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("validated");
    img.save(path).map_err(|e| Error::file(path, e.to_string()))
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<InconsistencyMask> {
    let path = path.as_ref();
    let img = open_image(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let weights = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    InconsistencyMask::new(w as usize, h as usize, weights)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

struct Container {
    width: usize,
    height: usize,
    depth: usize,
    values: Vec<f32>,
}

/// `magic, u32 width, u32 height, u32 depth`, then `f32` values.
fn read_container(path: &Path, magic: [u8; 4]) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 16,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    let (width, height, depth) = (read_u32(&bytes, 4) as usize, read_u32(&bytes, 8) as usize, read_u32(&bytes, 12) as usize);
    let expected = 16 + width * height * depth * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Container { width, height, depth, values })
}

fn write_container(path: &Path, magic: [u8; 4], dims: [usize; 3], values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + values.len() * 4);
    bytes.extend_from_slice(&magic);
    for d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::file(path, e.to_string()))
}

/// Reads a probability container; the normalization invariant is checked
/// at load time and failures name the file.
pub fn read_probabilities(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let c = read_container(path, PROBABILITY_MAGIC)?;
    ProbabilityMap::new(c.width, c.height, c.depth, c.values).map_err(|e| Error::file(path, e.to_string()))
}

pub fn write_probabilities(path: impl AsRef<Path>, probs: &ProbabilityMap) -> Result<()> {
    write_container(
        path.as_ref(),
        PROBABILITY_MAGIC,
        [probs.width(), probs.height(), probs.num_classes()],
        probs.values(),
    )
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let c = read_container(path, FEATURE_MAGIC)?;
    FeatureMap::new(c.width, c.height, c.depth, c.values).map_err(|e| Error::file(path, e.to_string()))
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMap) -> Result<()> {
    write_container(
        path.as_ref(),
        FEATURE_MAGIC,
        [features.width(), features.height(), features.channels()],
        features.values(),
    )
}

/// Middlebury `.flo`: `"PIEH"`, `i32` width, `i32` height, then
/// interleaved `(dx, dy)` `f32` pairs, all little-endian.
pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != FLO_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: FLO_MAGIC,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len(),
        });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::file(path, format!("invalid flow dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = 12 + width * height * 8;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let n = width * height;
    let (mut dx, mut dy) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for pair in bytes[12..expected].chunks_exact(8) {
        dx.push(f32::from_le_bytes(pair[..4].try_into().unwrap()));
        dy.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
    }
    FlowField::new(width, height, dx, dy).map_err(|e| Error::file(path, e.to_string()))
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(12 + flow.dx().len() * 8);
    bytes.extend_from_slice(&FLO_MAGIC);
    bytes.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.dx().iter().zip(flow.dy()) {
        bytes.extend_from_slice(&u.to_le_bytes());
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::file(path, e.to_string()))
}
