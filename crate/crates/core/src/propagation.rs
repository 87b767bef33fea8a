//! Backward-lookup warping of labels, probabilities and features.
//!
//! A destination pixel `(x, y)` gathers from `(x - dx, y - dy)` of the
//! previous frame, rounded half away from zero and clamped to the image.
//! Per-pixel vectors are copied whole, never interpolated, so label sets
//! and probability normalization are preserved exactly. Work is split
//! over a [`TileGrid`]; each tile writes a disjoint rectangle, so results
//! do not depend on the grid or on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{FeatureMap, FlowField, LabelMap, ProbabilityMap};

/// Per-pixel source coordinates, already clamped to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingField {
    width: usize,
    height: usize,
    src_x: Vec<f32>,
    src_y: Vec<f32>,
    /// Flat index of the nearest source pixel.
    nearest: Vec<u32>,
}

impl MappingField {
    fn from_clamped(width: usize, height: usize, src_x: Vec<f32>, src_y: Vec<f32>) -> Self {
        let nearest = src_x
            .par_iter()
            .zip(&src_y)
            .map(|(&sx, &sy)| (round_index(sy) * width + round_index(sx)) as u32)
            .collect();
        Self {
            width,
            height,
            src_x,
            src_y,
            nearest,
        }
    }

    pub fn identity(width: usize, height: usize) -> Result<Self> {
        Ok(mapping_from_flow(&FlowField::zeros(width, height)?))
    }

    /// Builds a mapping from raw coordinates, clamping them into the image.
    pub fn from_coordinates(width: usize, height: usize, src_x: Vec<f32>, src_y: Vec<f32>) -> Result<Self> {
        // FlowField::new carries the length and finiteness checks
        let checked = FlowField::new(width, height, src_x, src_y)?;
        let (max_x, max_y) = ((width - 1) as f32, (height - 1) as f32);
        Ok(Self::from_clamped(
            width,
            height,
            checked.dx().iter().map(|v| v.clamp(0.0, max_x)).collect(),
            checked.dy().iter().map(|v| v.clamp(0.0, max_y)).collect(),
        ))
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

    pub fn src_x(&self) -> &[f32] {
        &self.src_x
    }

    pub fn src_y(&self) -> &[f32] {
        &self.src_y
    }

    pub fn source(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.src_x[i], self.src_y[i])
    }

    /// Nearest source pixel for destination `(x, y)`.
    #[inline]
    pub fn source_pixel(&self, x: usize, y: usize) -> (usize, usize) {
        let i = self.nearest[y * self.width + x] as usize;
        (i % self.width, i / self.width)
    }

    /// Mapping equivalent to remapping by `self` and then by `then`.
    pub fn then(&self, then: &MappingField) -> Result<MappingField> {
        check_same("mapping", then.size(), self.size())?;
        let mut src_x = Vec::with_capacity(self.src_x.len());
        let mut src_y = Vec::with_capacity(self.src_y.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (mx, my) = then.source_pixel(x, y);
                let (sx, sy) = self.source(mx, my);
                src_x.push(sx);
                src_y.push(sy);
            }
        }
        Ok(Self::from_clamped(self.width, self.height, src_x, src_y))
    }
}

/// Same as `v.round() as usize` for the clamped coordinates stored in a
/// mapping, without the libm call.
#[inline(always)]
fn round_index(v: f32) -> usize {
    let t = v as usize;
    if v - t as f32 >= 0.5 {
        t + 1
    } else {
        t
    }
}

/// `src = (x - dx, y - dy)`, clamped to `[0, w-1] x [0, h-1]`.
pub fn mapping_from_flow(flow: &FlowField) -> MappingField {
    let (w, h) = flow.size();
    let (max_x, max_y) = ((w - 1) as f32, (h - 1) as f32);
    let mut src_x = Vec::with_capacity(w * h);
    let mut src_y = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(x, y);
            src_x.push((x as f32 - dx).clamp(0.0, max_x));
            src_y.push((y as f32 - dy).clamp(0.0, max_y));
        }
    }
    MappingField::from_clamped(w, h, src_x, src_y)
}

/// Mapping at another resolution: the flow is resized nearest with its
/// displacements scaled before conversion.
pub fn mapping_at(flow: &FlowField, width: usize, height: usize) -> Result<MappingField> {
    Ok(mapping_from_flow(&flow.resize_nearest(width, height)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
}

/// Half-open pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Default for TileGrid {
    fn default() -> Self {
        Self { rows: 4, cols: 4 }
    }
}

impl TileGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!("tile grid {rows}x{cols} must be at least 1x1")));
        }
        Ok(Self { rows, cols })
    }

    pub fn single() -> Self {
        Self { rows: 1, cols: 1 }
    }

    /// Near-equal split; tiles that would be empty on small images are
    /// dropped.
    pub fn tiles(&self, width: usize, height: usize) -> Vec<Tile> {
        let cuts = |len: usize, parts: usize| -> Vec<usize> {
            let parts = parts.max(1);
            let mut c: Vec<usize> = (0..=parts).map(|i| i * len / parts).collect();
            c.dedup();
            c
        };
        let xs = cuts(width, self.cols);
        let ys = cuts(height, self.rows);
        let mut tiles = Vec::with_capacity(self.rows * self.cols);
        for yw in ys.windows(2) {
            for xw in xs.windows(2) {
                tiles.push(Tile {
                    x0: xw[0],
                    y0: yw[0],
                    x1: xw[1],
                    y1: yw[1],
                });
            }
        }
        tiles
    }
}

fn check_same(what: &'static str, left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { what, left, right });
    }
    Ok(())
}

/// Gathers `channels`-wide pixel vectors through `mapping`, tile by tile.
fn gather<T: Copy + Default + Send + Sync>(
    src: &[T],
    channels: usize,
    mapping: &MappingField,
    grid: TileGrid,
) -> Vec<T> {
    let (w, h) = mapping.size();
    let tiles = grid.tiles(w, h);
    let blocks: Vec<Vec<T>> = tiles
        .par_iter()
        .map(|t| {
            let row_len = (t.x1 - t.x0) * channels;
            let mut block = vec![T::default(); row_len * (t.y1 - t.y0)];
            for (y, dst) in (t.y0..t.y1).zip(block.chunks_exact_mut(row_len)) {
                let idx = &mapping.nearest[y * w + t.x0..y * w + t.x1];
                if channels == 1 {
                    for (d, &i) in dst.iter_mut().zip(idx) {
                        *d = src[i as usize];
                    }
                } else {
                    for (d, &i) in dst.chunks_exact_mut(channels).zip(idx) {
                        let i = i as usize * channels;
                        d.copy_from_slice(&src[i..i + channels]);
                    }
                }
            }
            block
        })
        .collect();
    let mut out = vec![T::default(); w * h * channels];
    for (t, block) in tiles.iter().zip(blocks) {
        let row_len = (t.x1 - t.x0) * channels;
        for (r, y) in (t.y0..t.y1).enumerate() {
            let dst = (y * w + t.x0) * channels;
            out[dst..dst + row_len].copy_from_slice(&block[r * row_len..(r + 1) * row_len]);
        }
    }
    out
}

pub fn remap_labels(labels: &LabelMap, mapping: &MappingField, tiles: TileGrid) -> Result<LabelMap> {
    check_same("mapping", mapping.size(), labels.size())?;
    let out = gather(labels.labels(), 1, mapping, tiles);
    Ok(LabelMap::from_parts_unchecked(
        labels.width(),
        labels.height(),
        out,
        labels.num_classes(),
        labels.ignore_id(),
    ))
}

pub fn remap_probabilities(probs: &ProbabilityMap, mapping: &MappingField, tiles: TileGrid) -> Result<ProbabilityMap> {
    check_same("mapping", mapping.size(), probs.size())?;
    let c = probs.num_classes();
    let out = gather(probs.values(), c, mapping, tiles);
    Ok(ProbabilityMap::from_parts_unchecked(probs.width(), probs.height(), c, out))
}

/// `mapping` must already be at the feature resolution; see [`mapping_at`].
pub fn remap_features(features: &FeatureMap, mapping: &MappingField, tiles: TileGrid) -> Result<FeatureMap> {
    check_same("low-resolution mapping", mapping.size(), features.size())?;
    let c = features.channels();
    let out = gather(features.values(), c, mapping, tiles);
    Ok(FeatureMap::from_parts_unchecked(features.width(), features.height(), c, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes(w: usize, h: usize) -> LabelMap {
        LabelMap::from_fn(w, h, 4, 255, |x, _| (x % 4) as u8).unwrap()
    }

    #[test]
    fn zero_flow_is_identity_mapping() {
        let m = mapping_from_flow(&FlowField::zeros(5, 4).unwrap());
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(m.source(x, y), (x as f32, y as f32));
            }
        }
    }

    #[test]
    fn uniform_flow_shifts_source() {
        let m = mapping_from_flow(&FlowField::uniform(8, 8, 2.0, 0.0).unwrap());
        assert_eq!(m.source(5, 3), (3.0, 3.0));
    }

    #[test]
    fn out_of_bounds_source_clamps() {
        let m = mapping_from_flow(&FlowField::uniform(8, 8, -3.0, -3.0).unwrap());
        assert_eq!(m.source(7, 7), (7.0, 7.0));
        let f = FlowField::from_fn(8, 8, |x, y| if (x, y) == (0, 0) { (3.0, 3.0) } else { (0.0, 0.0) }).unwrap();
        assert_eq!(mapping_from_flow(&f).source(0, 0), (0.0, 0.0));
    }

    #[test]
    fn identity_remap_is_copy() {
        let l = stripes(13, 7);
        let m = MappingField::identity(13, 7).unwrap();
        assert_eq!(remap_labels(&l, &m, TileGrid::default()).unwrap(), l);
    }

    #[test]
    fn shift_matches_array_oracle() {
        let l = stripes(16, 6);
        let m = mapping_from_flow(&FlowField::uniform(16, 6, 3.0, 0.0).unwrap());
        let out = remap_labels(&l, &m, TileGrid::new(3, 3).unwrap()).unwrap();
        for y in 0..6 {
            for x in 0..16usize {
                let expected = l.get(x.saturating_sub(3), y);
                assert_eq!(out.get(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn fractional_offsets_round_to_identity() {
        let l = stripes(9, 9);
        let m = mapping_from_flow(&FlowField::uniform(9, 9, 0.4, -0.4).unwrap());
        let expected: Vec<u8> = (0..81)
            .map(|i| {
                let (x, y) = (i % 9, i / 9);
                // the clamped border columns round back onto themselves too
                l.get(x, y)
            })
            .collect();
        assert_eq!(remap_labels(&l, &m, TileGrid::default()).unwrap().labels(), expected.as_slice());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let l = stripes(8, 1);
        let m = mapping_from_flow(&FlowField::uniform(8, 1, 0.5, 0.0).unwrap());
        // src 3.5 -> 4
        assert_eq!(remap_labels(&l, &m, TileGrid::single()).unwrap().get(4, 0), l.get(4, 0));
        let m = mapping_from_flow(&FlowField::uniform(8, 1, 1.5, 0.0).unwrap());
        // src 2.5 -> 3
        assert_eq!(remap_labels(&l, &m, TileGrid::single()).unwrap().get(4, 0), l.get(3, 0));
    }

    #[test]
    fn probability_shift_matches_oracle() {
        let values: Vec<f32> = (0..16).flat_map(|i| [i as f32 / 16.0, 1.0 - i as f32 / 16.0]).collect();
        let p = ProbabilityMap::new(4, 4, 2, values).unwrap();
        let m = mapping_from_flow(&FlowField::uniform(4, 4, 1.0, 1.0).unwrap());
        let out = remap_probabilities(&p, &m, TileGrid::default()).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.pixel(x, y), p.pixel(x.saturating_sub(1), y.saturating_sub(1)));
            }
        }
        assert_eq!(out.max_normalization_error(), p.max_normalization_error());
    }

    #[test]
    fn features_constant_under_any_mapping() {
        let f = FeatureMap::new(6, 3, 2, vec![0.25; 36]).unwrap();
        let flow = FlowField::from_fn(6, 3, |x, y| (x as f32 * 0.7 - 2.0, y as f32 - 1.3)).unwrap();
        let out = remap_features(&f, &mapping_from_flow(&flow), TileGrid::default()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn feature_mapping_must_match_resolution() {
        let f = FeatureMap::zeros(4, 2, 1).unwrap();
        let m = MappingField::identity(8, 4).unwrap();
        assert!(matches!(
            remap_features(&f, &m, TileGrid::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let low = mapping_at(&FlowField::uniform(8, 4, 2.0, 0.0).unwrap(), 4, 2).unwrap();
        assert_eq!(low.source(3, 1), (2.0, 1.0));
    }

    #[test]
    fn tiles_partition_image() {
        for (w, h) in [(1, 1), (7, 3), (100, 37), (2048, 1024)] {
            for grid in [TileGrid::single(), TileGrid::new(3, 3).unwrap(), TileGrid::new(4, 4).unwrap()] {
                let mut hits = vec![0u8; w * h];
                for t in grid.tiles(w, h) {
                    for y in t.y0..t.y1 {
                        for x in t.x0..t.x1 {
                            hits[y * w + x] += 1;
                        }
                    }
                }
                assert!(hits.iter().all(|&c| c == 1));
            }
        }
        assert!(TileGrid::new(0, 3).is_err());
    }
}
