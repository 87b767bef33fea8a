//! Raster value types shared by every stage of the pipeline.
//!
//! All buffers are row-major with a top-left origin and `y` growing
//! downward. Multi-channel rasters store each pixel's channels
//! contiguously (`HWC`), so a per-pixel vector can be gathered as one
//! slice. Values are immutable once constructed; operations return new
//! values.

mod io;
mod resample;

pub use io::{
    load_frame_sequence, read_features, read_flo, read_frame, read_label_png, read_mask_png,
    read_probabilities, write_features, write_flo, write_frame, write_label_png, write_mask_png,
    write_probabilities, FramePattern, FEATURE_MAGIC, FLO_MAGIC, PROBABILITY_MAGIC,
};
pub use resample::{area_weights, resize_area_frame, resize_area_probabilities};
pub(crate) use resample::resize_area_channels;

use crate::error::{Error, Result};

pub type ClassId = u8;

/// Cityscapes convention for "not annotated".
pub const DEFAULT_IGNORE_ID: ClassId = 255;

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

fn check_len(width: usize, height: usize, channels: usize, actual: usize) -> Result<()> {
    check_dims(width, height)?;
    let expected = width * height * channels;
    if expected != actual {
        return Err(Error::BufferLength {
            width,
            height,
            channels,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_finite(what: &'static str, values: &[f32]) -> Result<()> {
    if let Some((index, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidValue {
            what,
            index,
            value: *v as f64,
        });
    }
    Ok(())
}

/// One 8-bit RGB video frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    samples: Vec<u8>,
    index: u64,
}

impl Frame {
    pub fn new(width: usize, height: usize, samples: Vec<u8>, index: u64) -> Result<Self> {
        check_len(width, height, 3, samples.len())?;
        Ok(Self {
            width,
            height,
            samples,
            index,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        index: u64,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut samples = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                samples.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, samples, index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn with_index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    /// Luma with 0.299/0.587/0.114 weights, in `[0, 255]`.
    pub fn luma(&self) -> Vec<f32> {
        self.samples
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect()
    }

    pub fn flip_horizontal(&self) -> Frame {
        let w = self.width;
        Frame::from_fn(w, self.height, self.index, |x, y| self.pixel(w - 1 - x, y))
            .expect("dimensions already validated")
    }
}

/// Hard per-pixel class assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<ClassId>,
    num_classes: usize,
    ignore_id: ClassId,
}

impl LabelMap {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<ClassId>,
        num_classes: usize,
        ignore_id: ClassId,
    ) -> Result<Self> {
        check_len(width, height, 1, labels.len())?;
        if (ignore_id as usize) < num_classes {
            return Err(Error::IgnoreCollision {
                ignore_id,
                num_classes,
            });
        }
        if let Some((i, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| (l as usize) >= num_classes && l != ignore_id)
        {
            return Err(Error::LabelOutOfRange {
                label,
                x: i % width,
                y: i / width,
                num_classes,
                ignore_id,
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            num_classes,
            ignore_id,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        label: ClassId,
        num_classes: usize,
        ignore_id: ClassId,
    ) -> Result<Self> {
        check_dims(width, height)?;
        Self::new(width, height, vec![label; width * height], num_classes, ignore_id)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        num_classes: usize,
        ignore_id: ClassId,
        mut f: impl FnMut(usize, usize) -> ClassId,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self::new(width, height, labels, num_classes, ignore_id)
    }

    /// Trusted constructor for labels produced by remapping or argmax,
    /// which cannot leave the source label set.
    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        labels: Vec<ClassId>,
        num_classes: usize,
        ignore_id: ClassId,
    ) -> Self {
        debug_assert_eq!(labels.len(), width * height);
        Self {
            width,
            height,
            labels,
            num_classes,
            ignore_id,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_id(&self) -> ClassId {
        self.ignore_id
    }

    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    /// Sorted set of distinct ids present in the map.
    pub fn label_set(&self) -> Vec<ClassId> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Nearest-neighbour resize; source pixel for destination `x` is
    /// `floor((x + 0.5) * src / dst)`.
    pub fn resize_nearest(&self, new_width: usize, new_height: usize) -> Result<LabelMap> {
        check_dims(new_width, new_height)?;
        if (new_width, new_height) == self.size() {
            return Ok(self.clone());
        }
        let xs = nearest_indices(self.width, new_width);
        let ys = nearest_indices(self.height, new_height);
        let mut labels = Vec::with_capacity(new_width * new_height);
        for &sy in &ys {
            let row = &self.labels[sy * self.width..(sy + 1) * self.width];
            labels.extend(xs.iter().map(|&sx| row[sx]));
        }
        Ok(Self::from_parts_unchecked(
            new_width,
            new_height,
            labels,
            self.num_classes,
            self.ignore_id,
        ))
    }
}

pub(crate) fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|x| (((2 * x + 1) * src) / (2 * dst)).min(src - 1))
        .collect()
}

/// Per-pixel class distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    num_classes: usize,
    values: Vec<f32>,
}

/// Allowed deviation of a pixel's class sum from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

impl ProbabilityMap {
    /// Validates non-negativity and per-pixel normalization.
    pub fn new(width: usize, height: usize, num_classes: usize, values: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidParameter("probability map needs at least one class".into()));
        }
        check_len(width, height, num_classes, values.len())?;
        for (i, px) in values.chunks_exact(num_classes).enumerate() {
            let mut sum = 0.0f64;
            for &v in px {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidValue {
                        what: "probability",
                        index: i * num_classes,
                        value: v as f64,
                    });
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::NotNormalized {
                    x: i % width,
                    y: i / width,
                    sum,
                });
            }
        }
        Ok(Self {
            width,
            height,
            num_classes,
            values,
        })
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        num_classes: usize,
        values: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(values.len(), width * height * num_classes);
        Self {
            width,
            height,
            num_classes,
            values,
        }
    }

    /// One-hot encoding of a label map. Ignored pixels get a uniform
    /// distribution.
    pub fn one_hot(labels: &LabelMap) -> ProbabilityMap {
        let c = labels.num_classes();
        let mut values = vec![0.0f32; labels.labels().len() * c];
        for (px, &l) in values.chunks_exact_mut(c).zip(labels.labels()) {
            if (l as usize) < c {
                px[l as usize] = 1.0;
            } else {
                px.fill(1.0 / c as f32);
            }
        }
        Self::from_parts_unchecked(labels.width(), labels.height(), c, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.num_classes;
        &self.values[i..i + self.num_classes]
    }

    /// Argmax per pixel, ties broken toward the lowest class id.
    pub fn argmax(&self, ignore_id: ClassId) -> Result<LabelMap> {
        if (ignore_id as usize) < self.num_classes {
            return Err(Error::IgnoreCollision {
                ignore_id,
                num_classes: self.num_classes,
            });
        }
        let labels = self
            .values
            .chunks_exact(self.num_classes)
            .map(argmax_lowest)
            .collect();
        Ok(LabelMap::from_parts_unchecked(
            self.width,
            self.height,
            labels,
            self.num_classes,
            ignore_id,
        ))
    }

    /// Largest absolute deviation of any pixel sum from 1.
    pub fn max_normalization_error(&self) -> f64 {
        self.values
            .chunks_exact(self.num_classes)
            .map(|px| (px.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Nearest-neighbour resize; vectors are copied whole.
    pub fn resize_nearest(&self, new_width: usize, new_height: usize) -> Result<ProbabilityMap> {
        check_dims(new_width, new_height)?;
        if (new_width, new_height) == self.size() {
            return Ok(self.clone());
        }
        let c = self.num_classes;
        let xs = nearest_indices(self.width, new_width);
        let ys = nearest_indices(self.height, new_height);
        let mut values = Vec::with_capacity(new_width * new_height * c);
        for &sy in &ys {
            for &sx in &xs {
                let i = (sy * self.width + sx) * c;
                values.extend_from_slice(&self.values[i..i + c]);
            }
        }
        Ok(Self::from_parts_unchecked(new_width, new_height, c, values))
    }
}

pub(crate) fn argmax_lowest(px: &[f32]) -> ClassId {
    let mut best = 0usize;
    for (c, &v) in px.iter().enumerate().skip(1) {
        if v > px[best] {
            best = c;
        }
    }
    best as ClassId
}

/// Low-resolution activations carried alongside the predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParameter("feature map needs at least one channel".into()));
        }
        check_len(width, height, channels, values.len())?;
        check_finite("feature map", &values)?;
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        check_dims(width, height)?;
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Self {
        Self {
            width,
            height,
            channels,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.values[i..i + self.channels]
    }
}

/// Dense per-pixel displacement from a source frame to a target frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        check_len(width, height, 1, dx.len())?;
        check_len(width, height, 1, dy.len())?;
        check_finite("flow dx", &dx)?;
        check_finite("flow dy", &dy)?;
        Ok(Self { width, height, dx, dy })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, dx: f32, dy: f32) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        Self::new(width, height, vec![dx; n], vec![dy; n])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        let (mut dx, mut dy) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                dx.push(u);
                dy.push(v);
            }
        }
        Self::new(width, height, dx, dy)
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Self {
        Self { width, height, dx, dy }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Nearest-neighbour resize with displacements scaled by the
    /// resolution ratio on each axis.
    pub fn resize_nearest(&self, new_width: usize, new_height: usize) -> Result<FlowField> {
        check_dims(new_width, new_height)?;
        if (new_width, new_height) == self.size() {
            return Ok(self.clone());
        }
        let sx = new_width as f32 / self.width as f32;
        let sy = new_height as f32 / self.height as f32;
        let xs = nearest_indices(self.width, new_width);
        let ys = nearest_indices(self.height, new_height);
        let n = new_width * new_height;
        let (mut dx, mut dy) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &y in &ys {
            for &x in &xs {
                let i = y * self.width + x;
                dx.push(self.dx[i] * sx);
                dy.push(self.dy[i] * sy);
            }
        }
        Ok(Self::from_parts_unchecked(new_width, new_height, dx, dy))
    }

    /// Mean endpoint error against `truth` over pixels at least `margin`
    /// pixels away from every border.
    pub fn mean_endpoint_error(&self, truth: &FlowField, margin: usize) -> Result<f64> {
        if self.size() != truth.size() {
            return Err(Error::DimensionMismatch {
                what: "flow",
                left: self.size(),
                right: truth.size(),
            });
        }
        let (w, h) = self.size();
        if 2 * margin >= w || 2 * margin >= h {
            return Err(Error::InvalidParameter(format!(
                "margin {margin} leaves no interior in {w}x{h}"
            )));
        }
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for y in margin..h - margin {
            for x in margin..w - margin {
                let (u, v) = self.at(x, y);
                let (tu, tv) = truth.at(x, y);
                sum += (((u - tu) as f64).powi(2) + ((v - tv) as f64).powi(2)).sqrt();
                count += 1;
            }
        }
        Ok(sum / count as f64)
    }
}

/// Soft per-pixel unreliability weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InconsistencyMask {
    width: usize,
    height: usize,
    weights: Vec<f32>,
}

impl InconsistencyMask {
    pub fn new(width: usize, height: usize, weights: Vec<f32>) -> Result<Self> {
        check_len(width, height, 1, weights.len())?;
        if let Some((index, &w)) = weights
            .iter()
            .enumerate()
            .find(|(_, &w)| !(0.0..=1.0).contains(&w))
        {
            return Err(Error::InvalidValue {
                what: "mask weight",
                index,
                value: w as f64,
            });
        }
        Ok(Self { width, height, weights })
    }

    pub fn filled(width: usize, height: usize, weight: f32) -> Result<Self> {
        check_dims(width, height)?;
        Self::new(width, height, vec![weight; width * height])
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, weights: Vec<f32>) -> Self {
        Self { width, height, weights }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.weights[y * self.width + x]
    }

    /// Fraction of pixels with weight at or above `threshold`.
    pub fn fraction_at_least(&self, threshold: f32) -> f64 {
        let n = self.weights.iter().filter(|&&w| w >= threshold).count();
        n as f64 / self.weights.len() as f64
    }

    pub fn resize_nearest(&self, new_width: usize, new_height: usize) -> Result<InconsistencyMask> {
        check_dims(new_width, new_height)?;
        if (new_width, new_height) == self.size() {
            return Ok(self.clone());
        }
        let xs = nearest_indices(self.width, new_width);
        let ys = nearest_indices(self.height, new_height);
        let mut weights = Vec::with_capacity(new_width * new_height);
        for &y in &ys {
            weights.extend(xs.iter().map(|&x| self.weights[y * self.width + x]));
        }
        Ok(Self::from_parts_unchecked(new_width, new_height, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_reject_bad_lengths() {
        assert!(matches!(Frame::new(2, 2, vec![0; 11], 0), Err(Error::BufferLength { .. })));
        assert!(matches!(Frame::new(0, 2, vec![], 0), Err(Error::InvalidDimensions { .. })));
        assert!(LabelMap::new(2, 2, vec![0; 3], 2, 255).is_err());
        assert!(ProbabilityMap::new(2, 1, 2, vec![1.0, 0.0, 0.5]).is_err());
        assert!(FeatureMap::new(2, 1, 2, vec![0.0; 3]).is_err());
        assert!(FlowField::new(2, 1, vec![0.0; 2], vec![0.0; 1]).is_err());
        assert!(InconsistencyMask::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn label_map_invariants() {
        assert!(matches!(
            LabelMap::new(2, 1, vec![0, 1], 3, 2),
            Err(Error::IgnoreCollision { .. })
        ));
        let err = LabelMap::new(2, 1, vec![0, 7], 3, 255).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 7, x: 1, y: 0, .. }));
        assert!(LabelMap::new(2, 1, vec![0, 255], 3, 255).is_ok());
    }

    #[test]
    fn probability_map_invariants() {
        assert!(matches!(
            ProbabilityMap::new(1, 1, 2, vec![0.5, 0.6]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(ProbabilityMap::new(1, 1, 2, vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityMap::new(1, 1, 2, vec![f32::NAN, 1.0]).is_err());
        assert!(ProbabilityMap::new(1, 1, 2, vec![0.5, 0.500_001]).is_ok());
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(FeatureMap::new(1, 1, 1, vec![f32::INFINITY]).is_err());
        assert!(FlowField::new(1, 1, vec![f32::NAN], vec![0.0]).is_err());
        assert!(InconsistencyMask::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let p = ProbabilityMap::new(2, 1, 3, vec![0.4, 0.4, 0.2, 0.2, 0.4, 0.4]).unwrap();
        assert_eq!(p.argmax(255).unwrap().labels(), &[0, 1]);
    }

    #[test]
    fn resize_nearest_upscale_replicates_blocks() {
        let m = LabelMap::new(2, 2, vec![0, 1, 2, 3], 4, 255).unwrap();
        let up = m.resize_nearest(4, 4).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            0, 0, 1, 1,
            0, 0, 1, 1,
            2, 2, 3, 3,
            2, 2, 3, 3,
        ];
        assert_eq!(up.labels(), expected.as_slice());
    }

    #[test]
    fn resize_nearest_identity_is_copy() {
        let m = LabelMap::from_fn(5, 3, 4, 255, |x, y| ((x + y) % 4) as u8).unwrap();
        assert_eq!(m.resize_nearest(5, 3).unwrap(), m);
    }

    #[test]
    fn resize_nearest_rejects_zero() {
        let m = LabelMap::filled(2, 2, 0, 1, 255).unwrap();
        assert!(matches!(m.resize_nearest(0, 2), Err(Error::InvalidDimensions { .. })));
    }

    #[test]
    fn resize_round_trip_integer_ratio() {
        let small = LabelMap::from_fn(512, 256, 19, 255, |x, y| ((x * 7 + y * 13) % 19) as u8).unwrap();
        let big = small.resize_nearest(2048, 1024).unwrap();
        // every 4x4 block holds a single source label
        for y in 0..1024 {
            for x in 0..2048 {
                assert_eq!(big.get(x, y), small.get(x / 4, y / 4));
            }
        }
        assert_eq!(big.resize_nearest(512, 256).unwrap(), small);
    }

    #[test]
    fn resize_keeps_label_set() {
        let m = LabelMap::from_fn(7, 5, 5, 255, |x, y| if x > y { 3 } else { 255 }).unwrap();
        let r = m.resize_nearest(3, 11).unwrap();
        assert!(r.label_set().iter().all(|l| m.label_set().contains(l)));
    }

    #[test]
    fn flow_resize_scales_displacements() {
        let f = FlowField::uniform(4, 2, 1.0, -0.5).unwrap();
        let g = f.resize_nearest(8, 8).unwrap();
        assert!(g.dx().iter().all(|&v| v == 2.0));
        assert!(g.dy().iter().all(|&v| v == -2.0));
    }

    #[test]
    fn one_hot_is_normalized() {
        let m = LabelMap::new(3, 1, vec![0, 2, 255], 3, 255).unwrap();
        let p = ProbabilityMap::one_hot(&m);
        assert!(p.max_normalization_error() < 1e-6);
        assert_eq!(p.pixel(1, 0), &[0.0, 0.0, 1.0]);
    }
}
