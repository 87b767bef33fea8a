//! Accuracy, consistency and timing measurements.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{ClassId, LabelMap};

/// Version tag written into every metrics report.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// `counts[gt][pred]`; ground-truth ignore pixels are skipped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_id: ClassId,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, ignore_id: ClassId) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidParameter("num_classes must be positive".into()));
        }
        if (ignore_id as usize) < num_classes {
            return Err(Error::IgnoreCollision { ignore_id, num_classes });
        }
        Ok(Self {
            num_classes,
            ignore_id,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.size() != gt.size() {
            return Err(Error::DimensionMismatch {
                what: "prediction",
                left: pred.size(),
                right: gt.size(),
            });
        }
        let n = self.num_classes;
        for (i, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
            if g == self.ignore_id {
                continue;
            }
            for (what, v) in [("prediction", p), ("ground truth", g)] {
                if v as usize >= n {
                    return Err(Error::InvalidValue {
                        what,
                        index: i,
                        value: v as f64,
                    });
                }
            }
            self.counts[g as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ClassCountMismatch {
                left: self.num_classes,
                right: other.num_classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU; `None` for classes absent from both prediction and
    /// ground truth.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let n = self.num_classes;
        (0..n)
            .map(|c| {
                let tp = self.get(c, c);
                let gt_total: u64 = (0..n).map(|p| self.get(c, p)).sum();
                let pred_total: u64 = (0..n).map(|g| self.get(g, c)).sum();
                let union = gt_total + pred_total - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over classes with a defined IoU.
    pub fn mean_iou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let hits: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(hits as f64 / total as f64)
    }
}

/// mIoU of a single prediction against its ground truth.
pub fn frame_miou(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    let mut m = ConfusionMatrix::new(gt.num_classes(), gt.ignore_id())?;
    m.accumulate(pred, gt)?;
    m.mean_iou()
}

/// Fractions of pixels flagged inconsistent, grouped by hop distance
/// from the last keyframe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyStats {
    pub bucket_width: f64,
    /// `per_hop[h - 1]` holds all fractions observed `h` hops out.
    pub per_hop: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopSummary {
    pub hop: usize,
    pub samples: usize,
    pub mean: f64,
    pub max: f64,
    /// `histogram[k]` counts fractions in `[k * w, (k + 1) * w)`.
    pub histogram: Vec<u64>,
}

impl Default for InconsistencyStats {
    fn default() -> Self {
        Self::new(0.005)
    }
}

impl InconsistencyStats {
    pub fn new(bucket_width: f64) -> Self {
        Self {
            bucket_width,
            per_hop: Vec::new(),
        }
    }

    pub fn record(&mut self, hop: usize, fraction: f64) {
        assert!(hop >= 1, "hop counts start at 1");
        if self.per_hop.len() < hop {
            self.per_hop.resize(hop, Vec::new());
        }
        self.per_hop[hop - 1].push(fraction);
    }

    pub fn summary(&self) -> Vec<HopSummary> {
        self.per_hop
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, v)| {
                let max = v.iter().cloned().fold(0.0, f64::max);
                let buckets = (max / self.bucket_width).floor() as usize + 1;
                let mut histogram = vec![0u64; buckets];
                for &f in v {
                    histogram[((f / self.bucket_width).floor() as usize).min(buckets - 1)] += 1;
                }
                HopSummary {
                    hop: i + 1,
                    samples: v.len(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    max,
                    histogram,
                }
            })
            .collect()
    }
}

/// Wall-clock statistics in milliseconds over the retained samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub label: String,
    pub samples: usize,
    pub warmup_discarded: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub stddev_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Mean and median disagree by more than two standard deviations.
    pub skewed: bool,
    pub durations_ms: Vec<f64>,
}

impl TimingReport {
    /// Statistics over `durations_ms` (population standard deviation).
    pub fn from_samples(label: impl Into<String>, durations_ms: &[f64], warmup_discarded: usize) -> Result<Self> {
        if durations_ms.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let n = durations_ms.len() as f64;
        let mean = durations_ms.iter().sum::<f64>() / n;
        let var = durations_ms.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = durations_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        };
        let stddev = var.sqrt();
        Ok(Self {
            label: label.into(),
            samples: durations_ms.len(),
            warmup_discarded,
            mean_ms: mean,
            median_ms: median,
            stddev_ms: stddev,
            min_ms: sorted[0],
            max_ms: *sorted.last().unwrap(),
            skewed: (mean - median).abs() > 2.0 * stddev,
            durations_ms: durations_ms.to_vec(),
        })
    }
}

/// Runs `f` `samples` times, drops the first `warmup` timings and
/// reports on the rest.
pub fn timed_probe<T>(label: &str, samples: usize, warmup: usize, mut f: impl FnMut() -> T) -> Result<TimingReport> {
    if samples == 0 || warmup >= samples {
        return Err(Error::InvalidParameter(format!(
            "timing probe needs more samples than warmup runs (samples {samples}, warmup {warmup})"
        )));
    }
    let durations: Vec<f64> = (0..samples)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    TimingReport::from_samples(label, &durations[warmup..], warmup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(w: usize, ids: &[u8], nc: usize) -> LabelMap {
        LabelMap::new(w, ids.len() / w, ids.to_vec(), nc, 255).unwrap()
    }

    #[test]
    fn iou_from_counts() {
        // gt: 0 0 1 1, pred: 0 1 1 1 -> class 0: 1/2, class 1: 2/3
        let mut m = ConfusionMatrix::new(2, 255).unwrap();
        m.accumulate(&labels(4, &[0, 1, 1, 1], 2), &labels(4, &[0, 0, 1, 1], 2)).unwrap();
        let iou = m.iou_per_class();
        assert_eq!(iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m.mean_iou().unwrap() - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_excluded() {
        let mut m = ConfusionMatrix::new(3, 255).unwrap();
        m.accumulate(&labels(2, &[0, 1], 3), &labels(2, &[0, 1], 3)).unwrap();
        assert_eq!(m.iou_per_class()[2], None);
        assert_eq!(m.mean_iou().unwrap(), 1.0);
    }

    #[test]
    fn ignore_pixels_are_skipped() {
        let mut m = ConfusionMatrix::new(2, 255).unwrap();
        m.accumulate(&labels(2, &[1, 1], 2), &labels(2, &[255, 1], 2)).unwrap();
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn empty_matrix_errors() {
        let m = ConfusionMatrix::new(2, 255).unwrap();
        assert!(matches!(m.mean_iou(), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn timing_statistics() {
        let r = TimingReport::from_samples("x", &[1.0, 2.0, 3.0, 10.0], 0).unwrap();
        assert_eq!(r.mean_ms, 4.0);
        assert_eq!(r.median_ms, 2.5);
        assert!((r.stddev_ms - 3.5355339).abs() < 1e-6);
        assert!(!r.skewed);
    }

    #[test]
    fn probe_discards_warmup() {
        let r = timed_probe("noop", 300, 50, || 1 + 1).unwrap();
        assert_eq!(r.samples, 250);
        assert_eq!(r.durations_ms.len(), 250);
        assert_eq!(r.warmup_discarded, 50);
        let one = timed_probe("noop", 1, 0, || ()).unwrap();
        assert_eq!(one.stddev_ms, 0.0);
        assert!(timed_probe("noop", 5, 5, || ()).is_err());
    }

    #[test]
    fn histogram_buckets() {
        let mut s = InconsistencyStats::new(0.005);
        for f in [0.0, 0.004, 0.006, 0.012] {
            s.record(2, f);
        }
        let sum = s.summary();
        assert_eq!(sum.len(), 1);
        assert_eq!(sum[0].hop, 2);
        assert_eq!(sum[0].histogram, vec![2, 1, 1]);
    }
}
