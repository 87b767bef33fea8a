//! Segmenter and refiner backends.
//!
//! The pipeline only needs per-frame probabilities, their argmax, and a
//! low-resolution feature map from a segmenter, plus a corrected
//! probability map from a refiner. Deterministic built-ins cover every
//! pipeline path without a trained network: stored outputs exported from a
//! real model, a colour-palette classifier for synthetic scenes, a
//! ground-truth oracle and a passthrough.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{
    read_features, read_label_png, read_probabilities, resize_area_channels, resize_area_frame,
    resize_area_probabilities, ClassId, FeatureMap, Frame, FramePattern, LabelMap, ProbabilityMap,
    DEFAULT_IGNORE_ID,
};

/// Default segmenter prediction resolution.
pub const PREDICTION_SIZE: (usize, usize) = (512, 256);
/// Default resolution of the low-level features.
pub const FEATURE_SIZE: (usize, usize) = (128, 64);

/// Input downscale factor applied before segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Downscale {
    Half,
    Full,
}

impl Downscale {
    pub fn factor(self) -> f64 {
        match self {
            Downscale::Half => 0.5,
            Downscale::Full => 1.0,
        }
    }

    /// Input size after downscaling, never below 1 px.
    pub fn apply(self, width: usize, height: usize) -> (usize, usize) {
        let f = self.factor();
        (
            ((width as f64 * f).round() as usize).max(1),
            ((height as f64 * f).round() as usize).max(1),
        )
    }
}

impl TryFrom<f64> for Downscale {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        if v == 0.5 {
            Ok(Downscale::Half)
        } else if v == 1.0 {
            Ok(Downscale::Full)
        } else {
            Err(format!("downscale factor must be 0.5 or 1.0, got {v}"))
        }
    }
}

impl From<Downscale> for f64 {
    fn from(d: Downscale) -> f64 {
        d.factor()
    }
}

impl fmt::Display for Downscale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.factor())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterOutput {
    pub probabilities: ProbabilityMap,
    pub labels: LabelMap,
    pub features: FeatureMap,
}

impl SegmenterOutput {
    /// Labels are derived as the argmax of `probabilities`.
    pub fn new(probabilities: ProbabilityMap, features: FeatureMap, ignore_id: ClassId) -> Result<Self> {
        let labels = probabilities.argmax(ignore_id)?;
        Ok(Self {
            probabilities,
            labels,
            features,
        })
    }
}

pub trait SegmenterBackend: Send + Sync {
    fn segment(&self, frame: &Frame, downscale: Downscale) -> Result<SegmenterOutput>;

    fn num_classes(&self) -> usize;

    fn ignore_id(&self) -> ClassId {
        DEFAULT_IGNORE_ID
    }

    /// Nominal per-frame cost, used only by the schedule simulator.
    fn declared_cost_ms(&self) -> Option<f64> {
        None
    }
}

pub trait RefinerBackend: Send + Sync {
    /// Corrected probabilities at the resolution of `warped_probs`.
    fn refine(&self, frame: &Frame, warped_probs: &ProbabilityMap, warped_features: &FeatureMap) -> Result<ProbabilityMap>;
}

/// Resize probabilities: area average when shrinking on both axes,
/// nearest otherwise.
pub fn resize_probabilities(p: &ProbabilityMap, width: usize, height: usize) -> Result<ProbabilityMap> {
    if width <= p.width() && height <= p.height() {
        resize_area_probabilities(p, width, height)
    } else {
        p.resize_nearest(width, height)
    }
}

/// Serves per-frame outputs exported offline as `probs_%06d.bin` and,
/// optionally, `feat_%06d.bin`, keyed by frame index.
#[derive(Clone, Debug)]
pub struct PrecomputedSegmenter {
    dir: PathBuf,
    num_classes: usize,
    ignore_id: ClassId,
    feature_shape: (usize, usize, usize),
}

pub const PROBABILITY_PATTERN: &str = "probs_%06d.bin";
pub const FEATURE_PATTERN: &str = "feat_%06d.bin";

impl PrecomputedSegmenter {
    /// Reads the lowest-indexed probability file to learn the class count.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(Error::file(&dir, "precomputed segmenter directory does not exist"));
        }
        let pattern = FramePattern::parse(PROBABILITY_PATTERN)?;
        let first = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| pattern.match_name(n)))
            .min()
            .ok_or_else(|| Error::NoFramesMatched {
                dir: dir.clone(),
                pattern: PROBABILITY_PATTERN.into(),
            })?;
        let probe = read_probabilities(dir.join(pattern.format(first)))?;
        Ok(Self {
            dir,
            num_classes: probe.num_classes(),
            ignore_id: DEFAULT_IGNORE_ID,
            feature_shape: (FEATURE_SIZE.0, FEATURE_SIZE.1, 1),
        })
    }

    pub fn with_ignore_id(mut self, ignore_id: ClassId) -> Self {
        self.ignore_id = ignore_id;
        self
    }

    /// Shape of the zero feature map returned when no feature file exists.
    pub fn with_fallback_features(mut self, width: usize, height: usize, channels: usize) -> Self {
        self.feature_shape = (width, height, channels);
        self
    }
}

impl SegmenterBackend for PrecomputedSegmenter {
    fn segment(&self, frame: &Frame, _downscale: Downscale) -> Result<SegmenterOutput> {
        let path = self.dir.join(FramePattern::parse(PROBABILITY_PATTERN)?.format(frame.index()));
        if !path.is_file() {
            return Err(Error::MissingFrame {
                frame_index: frame.index(),
                reason: format!("{} not found", path.display()),
            });
        }
        let probabilities = read_probabilities(&path)?;
        if probabilities.num_classes() != self.num_classes {
            return Err(Error::file(
                &path,
                format!("{} classes, expected {}", probabilities.num_classes(), self.num_classes),
            ));
        }
        let feat_path = self.dir.join(FramePattern::parse(FEATURE_PATTERN)?.format(frame.index()));
        let features = if feat_path.is_file() {
            read_features(&feat_path)?
        } else {
            let (w, h, c) = self.feature_shape;
            FeatureMap::zeros(w, h, c)?
        };
        SegmenterOutput::new(probabilities, features, self.ignore_id)
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn ignore_id(&self) -> ClassId {
        self.ignore_id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub color: [u8; 3],
    pub class_id: ClassId,
}

/// Classifies pixels by colour: class scores are a softmax over negative
/// RGB distances (in units of full scale) multiplied by `softness`.
#[derive(Clone, Debug)]
pub struct PaletteSegmenter {
    palette: Vec<PaletteEntry>,
    softness: f64,
    num_classes: usize,
    ignore_id: ClassId,
    prediction_size: (usize, usize),
    feature_size: (usize, usize),
    cost_ms: Option<f64>,
}

/// Channels of the palette segmenter's features: mean and standard
/// deviation of R, G, B and luma, each scaled to `[0, 1]`.
pub const PALETTE_FEATURE_CHANNELS: usize = 8;

impl PaletteSegmenter {
    pub fn new(palette: Vec<PaletteEntry>, softness: f64) -> Result<Self> {
        if palette.is_empty() {
            return Err(Error::InvalidParameter("palette must not be empty".into()));
        }
        let mut ids: Vec<ClassId> = palette.iter().map(|e| e.class_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("palette class ids must be distinct".into()));
        }
        if !(softness > 0.0) || !softness.is_finite() {
            return Err(Error::InvalidParameter(format!("softness must be positive, got {softness}")));
        }
        let num_classes = *ids.last().unwrap() as usize + 1;
        if num_classes > DEFAULT_IGNORE_ID as usize {
            return Err(Error::InvalidParameter(format!("class id {} collides with the ignore id", num_classes - 1)));
        }
        Ok(Self {
            palette,
            softness,
            num_classes,
            ignore_id: DEFAULT_IGNORE_ID,
            prediction_size: PREDICTION_SIZE,
            feature_size: FEATURE_SIZE,
            cost_ms: None,
        })
    }

    pub fn with_prediction_size(mut self, width: usize, height: usize) -> Self {
        self.prediction_size = (width, height);
        self
    }

    pub fn with_feature_size(mut self, width: usize, height: usize) -> Self {
        self.feature_size = (width, height);
        self
    }

    /// Class count wider than the palette, for scenes whose ground truth
    /// uses ids no palette entry covers.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if num_classes < self.num_classes || num_classes > DEFAULT_IGNORE_ID as usize {
            return Err(Error::InvalidParameter(format!(
                "num_classes {num_classes} must cover the palette and stay below the ignore id"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn with_declared_cost(mut self, cost_ms: f64) -> Self {
        self.cost_ms = Some(cost_ms);
        self
    }

    pub fn palette(&self) -> &[PaletteEntry] {
        &self.palette
    }

    pub fn prediction_size(&self) -> (usize, usize) {
        self.prediction_size
    }

    fn classify(&self, frame: &Frame) -> ProbabilityMap {
        let c = self.num_classes;
        let mut values = Vec::with_capacity(frame.width() * frame.height() * c);
        let mut scores = vec![0.0f64; self.palette.len()];
        for px in frame.samples().chunks_exact(3) {
            for (s, e) in scores.iter_mut().zip(&self.palette) {
                let d2: f64 = px
                    .iter()
                    .zip(e.color)
                    .map(|(&a, b)| {
                        let d = (a as f64 - b as f64) / 255.0;
                        d * d
                    })
                    .sum();
                *s = -self.softness * d2.sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let start = values.len();
            values.resize(start + c, 0.0f32);
            for (s, e) in scores.iter().zip(&self.palette) {
                values[start + e.class_id as usize] = ((s - max).exp() / total) as f32;
            }
        }
        ProbabilityMap::from_parts_unchecked(frame.width(), frame.height(), c, values)
    }

    fn features(&self, frame: &Frame) -> Result<FeatureMap> {
        let mut raw = Vec::with_capacity(frame.width() * frame.height() * PALETTE_FEATURE_CHANNELS);
        let luma = frame.luma();
        for (px, l) in frame.samples().chunks_exact(3).zip(luma) {
            let v = [px[0] as f32 / 255.0, px[1] as f32 / 255.0, px[2] as f32 / 255.0, l / 255.0];
            raw.extend_from_slice(&v);
            raw.extend(v.iter().map(|x| x * x));
        }
        let (fw, fh) = self.feature_size;
        let pooled = resize_area_channels(&raw, frame.width(), frame.height(), PALETTE_FEATURE_CHANNELS, fw, fh);
        let mut values = Vec::with_capacity(pooled.len());
        for cell in pooled.chunks_exact(PALETTE_FEATURE_CHANNELS) {
            let (mean, sq) = cell.split_at(4);
            values.extend(mean.iter().map(|&m| m as f32));
            values.extend(mean.iter().zip(sq).map(|(&m, &s)| (s - m * m).max(0.0).sqrt() as f32));
        }
        FeatureMap::new(fw, fh, PALETTE_FEATURE_CHANNELS, values)
    }
}

impl SegmenterBackend for PaletteSegmenter {
    fn segment(&self, frame: &Frame, downscale: Downscale) -> Result<SegmenterOutput> {
        let (sw, sh) = downscale.apply(frame.width(), frame.height());
        let scaled = resize_area_frame(frame, sw, sh)?;
        let probs = self.classify(&scaled);
        let (pw, ph) = self.prediction_size;
        let probs = resize_probabilities(&probs, pw, ph)?;
        let features = self.features(&scaled)?;
        SegmenterOutput::new(probs, features, self.ignore_id)
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn ignore_id(&self) -> ClassId {
        self.ignore_id
    }

    fn declared_cost_ms(&self) -> Option<f64> {
        self.cost_ms
    }
}

/// Source of per-frame ground-truth label maps.
pub trait GroundTruthProvider: Send + Sync {
    fn ground_truth(&self, frame_index: u64) -> Result<LabelMap>;
}

impl GroundTruthProvider for HashMap<u64, LabelMap> {
    fn ground_truth(&self, frame_index: u64) -> Result<LabelMap> {
        self.get(&frame_index).cloned().ok_or_else(|| Error::MissingFrame {
            frame_index,
            reason: "no ground truth".into(),
        })
    }
}

/// Ground truth read on demand from `dir/pattern` PNGs of class ids.
#[derive(Clone, Debug)]
pub struct DirectoryGroundTruth {
    dir: PathBuf,
    pattern: FramePattern,
    num_classes: usize,
    ignore_id: ClassId,
}

impl DirectoryGroundTruth {
    pub fn new(dir: impl Into<PathBuf>, pattern: &str, num_classes: usize, ignore_id: ClassId) -> Result<Self> {
        Ok(Self {
            dir: dir.into(),
            pattern: FramePattern::parse(pattern)?,
            num_classes,
            ignore_id,
        })
    }

    pub fn path_for(&self, frame_index: u64) -> PathBuf {
        self.dir.join(self.pattern.format(frame_index))
    }
}

impl GroundTruthProvider for DirectoryGroundTruth {
    fn ground_truth(&self, frame_index: u64) -> Result<LabelMap> {
        let path = self.path_for(frame_index);
        if !path.is_file() {
            return Err(Error::MissingFrame {
                frame_index,
                reason: format!("{} not found", path.display()),
            });
        }
        read_label_png(path, self.num_classes, self.ignore_id)
    }
}

/// Upper-bound refiner returning one-hot ground truth. Pixels marked with
/// the ignore id keep the warped distribution.
pub struct OracleRefiner {
    provider: Box<dyn GroundTruthProvider>,
}

impl OracleRefiner {
    pub fn new(provider: impl GroundTruthProvider + 'static) -> Self {
        Self {
            provider: Box::new(provider),
        }
    }
}

impl fmt::Debug for OracleRefiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OracleRefiner")
    }
}

impl RefinerBackend for OracleRefiner {
    fn refine(&self, frame: &Frame, warped_probs: &ProbabilityMap, _features: &FeatureMap) -> Result<ProbabilityMap> {
        let gt = self.provider.ground_truth(frame.index())?;
        let c = warped_probs.num_classes();
        if gt.num_classes() != c {
            return Err(Error::ClassCountMismatch {
                left: gt.num_classes(),
                right: c,
            });
        }
        let gt = gt.resize_nearest(warped_probs.width(), warped_probs.height())?;
        let mut values = warped_probs.values().to_vec();
        for (px, &l) in values.chunks_exact_mut(c).zip(gt.labels()) {
            if (l as usize) < c {
                px.fill(0.0);
                px[l as usize] = 1.0;
            }
        }
        Ok(ProbabilityMap::from_parts_unchecked(warped_probs.width(), warped_probs.height(), c, values))
    }
}

/// Returns the warped probabilities untouched; with it, refinement
/// reduces exactly to plain warping.
#[derive(Clone, Copy, Debug, Default)]
pub struct PassthroughRefiner;

impl RefinerBackend for PassthroughRefiner {
    fn refine(&self, _frame: &Frame, warped_probs: &ProbabilityMap, _features: &FeatureMap) -> Result<ProbabilityMap> {
        Ok(warped_probs.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::write_probabilities;

    fn palette() -> Vec<PaletteEntry> {
        vec![
            PaletteEntry { color: [200, 30, 30], class_id: 0 },
            PaletteEntry { color: [30, 200, 30], class_id: 1 },
            PaletteEntry { color: [30, 30, 200], class_id: 2 },
        ]
    }

    fn painted(w: usize, h: usize) -> (Frame, Vec<u8>) {
        let labels: Vec<u8> = (0..w * h).map(|i| ((i % w) * 3 / w) as u8).collect();
        let p = palette();
        let f = Frame::from_fn(w, h, 0, |x, y| p[labels[y * w + x] as usize].color).unwrap();
        (f, labels)
    }

    #[test]
    fn palette_recovers_painting() {
        let (f, labels) = painted(24, 8);
        let seg = PaletteSegmenter::new(palette(), 200.0).unwrap().with_prediction_size(24, 8).with_feature_size(6, 2);
        let out = seg.segment(&f, Downscale::Full).unwrap();
        assert_eq!(out.labels.labels(), labels.as_slice());
        assert!(out.probabilities.max_normalization_error() < 1e-6);
        assert_eq!(out.features.size(), (6, 2));
        assert_eq!(out.features.channels(), PALETTE_FEATURE_CHANNELS);
        assert_eq!(out.labels, out.probabilities.argmax(255).unwrap());
    }

    #[test]
    fn single_class_palette_is_certain() {
        let seg = PaletteSegmenter::new(vec![PaletteEntry { color: [0, 0, 0], class_id: 0 }], 1.0)
            .unwrap()
            .with_prediction_size(4, 4);
        let (f, _) = painted(4, 4);
        let out = seg.segment(&f, Downscale::Full).unwrap();
        assert!(out.probabilities.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equidistant_colors_tie_to_lower_id() {
        let seg = PaletteSegmenter::new(
            vec![
                PaletteEntry { color: [100, 0, 0], class_id: 1 },
                PaletteEntry { color: [0, 0, 100], class_id: 0 },
            ],
            5.0,
        )
        .unwrap()
        .with_prediction_size(1, 1)
        .with_feature_size(1, 1);
        let f = Frame::from_fn(1, 1, 0, |_, _| [50, 0, 50]).unwrap();
        let out = seg.segment(&f, Downscale::Full).unwrap();
        assert_eq!(out.probabilities.pixel(0, 0)[0], out.probabilities.pixel(0, 0)[1]);
        assert_eq!(out.labels.get(0, 0), 0);
    }

    #[test]
    fn palette_validation() {
        assert!(PaletteSegmenter::new(vec![], 1.0).is_err());
        let dup = vec![
            PaletteEntry { color: [0, 0, 0], class_id: 1 },
            PaletteEntry { color: [9, 9, 9], class_id: 1 },
        ];
        assert!(PaletteSegmenter::new(dup, 1.0).is_err());
    }

    #[test]
    fn half_downscale_keeps_output_size() {
        let (f, _) = painted(32, 16);
        let seg = PaletteSegmenter::new(palette(), 50.0).unwrap().with_prediction_size(32, 16);
        let out = seg.segment(&f, Downscale::Half).unwrap();
        assert_eq!(out.probabilities.size(), (32, 16));
        assert!(out.probabilities.max_normalization_error() < 1e-6);
    }

    #[test]
    fn palette_is_deterministic() {
        let (f, _) = painted(30, 10);
        let seg = PaletteSegmenter::new(palette(), 30.0).unwrap();
        assert_eq!(seg.segment(&f, Downscale::Half).unwrap(), seg.segment(&f, Downscale::Half).unwrap());
    }

    #[test]
    fn precomputed_lookup_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..30u64 {
            let a = i as f32 / 30.0;
            let p = ProbabilityMap::new(2, 1, 2, vec![a, 1.0 - a, 1.0 - a, a]).unwrap();
            write_probabilities(dir.path().join(format!("probs_{i:06}.bin")), &p).unwrap();
        }
        let seg = PrecomputedSegmenter::open(dir.path()).unwrap();
        let frame = Frame::from_fn(2, 1, 7, |_, _| [0, 0, 0]).unwrap();
        let out = seg.segment(&frame, Downscale::Full).unwrap();
        assert_eq!(out.probabilities.values()[0], 7.0 / 30.0);
        assert_eq!(out.features.size(), FEATURE_SIZE);

        let missing = frame.clone().with_index(30);
        assert!(matches!(seg.segment(&missing, Downscale::Full), Err(Error::MissingFrame { frame_index: 30, .. })));

        std::fs::write(dir.path().join("probs_000031.bin"), {
            let mut b = b"EVSP".to_vec();
            for d in [1u32, 1, 2] {
                b.extend_from_slice(&d.to_le_bytes());
            }
            b.extend_from_slice(&0.7f32.to_le_bytes());
            b.extend_from_slice(&0.7f32.to_le_bytes());
            b
        })
        .unwrap();
        let err = seg.segment(&frame.with_index(31), Downscale::Full).unwrap_err();
        assert!(err.to_string().contains("probs_000031.bin"), "{err}");
    }

    #[test]
    fn oracle_refiner_returns_one_hot() {
        let gt = LabelMap::new(3, 1, vec![2, 0, 255], 3, 255).unwrap();
        let mut provider = HashMap::new();
        provider.insert(4u64, gt);
        let oracle = OracleRefiner::new(provider);
        let warped = ProbabilityMap::new(3, 1, 3, vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2]).unwrap();
        let feats = FeatureMap::zeros(1, 1, 1).unwrap();
        let frame = Frame::from_fn(3, 1, 4, |_, _| [0, 0, 0]).unwrap();
        let out = oracle.refine(&frame, &warped, &feats).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.6, 0.2, 0.2]);
        assert!(out.max_normalization_error() < 1e-6);
        assert!(matches!(
            oracle.refine(&frame.with_index(5), &warped, &feats),
            Err(Error::MissingFrame { .. })
        ));
    }

    #[test]
    fn passthrough_is_identity() {
        let warped = ProbabilityMap::new(2, 1, 2, vec![0.3, 0.7, 1.0, 0.0]).unwrap();
        let frame = Frame::from_fn(2, 1, 0, |_, _| [0, 0, 0]).unwrap();
        let out = PassthroughRefiner.refine(&frame, &warped, &FeatureMap::zeros(1, 1, 1).unwrap()).unwrap();
        assert_eq!(out, warped);
    }

    #[test]
    fn downscale_serde() {
        assert_eq!(serde_json::to_string(&Downscale::Half).unwrap(), "0.5");
        assert_eq!(serde_json::from_str::<Downscale>("1.0").unwrap(), Downscale::Full);
        assert!(serde_json::from_str::<Downscale>("0.75").is_err());
    }
}
