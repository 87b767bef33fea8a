use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagery::Frame;

/// Single-channel `f32` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer length");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        // non-negative after the clamp, so truncation is floor
        let x0 = x as usize;
        let y0 = y as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear samples of the `size`-square patch whose top-left corner
    /// sits at `(x, y)`, row-major into `out`.
    pub fn sample_patch(&self, x: f32, y: f32, size: usize, out: &mut [f32]) {
        let inside = x >= 0.0 && y >= 0.0 && x + size as f32 <= (self.width - 1) as f32 && y + size as f32 <= (self.height - 1) as f32;
        if !inside {
            for (i, o) in out[..size * size].iter_mut().enumerate() {
                *o = self.sample(x + (i % size) as f32, y + (i / size) as f32);
            }
            return;
        }
        // every tap shares one fractional offset
        let (ix, iy) = (x as usize, y as usize);
        let (fx, fy) = (x - ix as f32, y - iy as f32);
        let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        for (r, row) in out[..size * size].chunks_exact_mut(size).enumerate() {
            let top = &self.data[(iy + r) * self.width + ix..][..size + 1];
            let bottom = &self.data[(iy + r + 1) * self.width + ix..][..size + 1];
            for (c, o) in row.iter_mut().enumerate() {
                *o = w[0] * top[c] + w[1] * top[c + 1] + w[2] * bottom[c] + w[3] * bottom[c + 1];
            }
        }
    }

    /// 2x2 box average to `floor(w/2) x floor(h/2)`.
    fn half(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = vec![0.0f32; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let r0 = &self.data[2 * y * self.width..][..self.width];
            let r1 = &self.data[(2 * y + 1) * self.width..][..self.width];
            for (x, out) in row.iter_mut().enumerate() {
                *out = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        });
        Plane::new(w, h, data)
    }

    /// Central differences with replicated borders.
    fn gradients(&self) -> (Plane, Plane) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0f32; w * h];
        let mut gy = vec![0.0f32; w * h];
        gx.par_chunks_mut(w)
            .zip(gy.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (rx, ry))| {
                let up = &self.data[y.saturating_sub(1) * w..][..w];
                let down = &self.data[(y + 1).min(h - 1) * w..][..w];
                let row = &self.data[y * w..][..w];
                for x in 0..w {
                    let l = row[x.saturating_sub(1)];
                    let r = row[(x + 1).min(w - 1)];
                    rx[x] = 0.5 * (r - l);
                    ry[x] = 0.5 * (down[x] - up[x]);
                }
            });
        (Plane::new(w, h, gx), Plane::new(w, h, gy))
    }
}

/// One level of the coarse-to-fine pyramid.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub image: Plane,
    gradients: OnceLock<(Plane, Plane)>,
}

impl PyramidLevel {
    pub fn new(image: Plane) -> Self {
        Self {
            image,
            gradients: OnceLock::new(),
        }
    }

    /// Horizontal central differences, computed on first use.
    pub fn grad_x(&self) -> &Plane {
        &self.gradients.get_or_init(|| self.image.gradients()).0
    }

    pub fn grad_y(&self) -> &Plane {
        &self.gradients.get_or_init(|| self.image.gradients()).1
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

/// Grayscale pyramid; level 0 is full resolution.
#[derive(Clone, Debug)]
pub struct Pyramid {
    levels: Vec<PyramidLevel>,
}

impl Pyramid {
    /// Builds `levels` levels, failing if the coarsest one would be
    /// smaller than `patch_size` on either axis.
    pub fn build(frame: &Frame, levels: usize, patch_size: usize) -> Result<Pyramid> {
        let (w, h) = frame.size();
        if levels == 0 || (w >> (levels - 1)) < patch_size || (h >> (levels - 1)) < patch_size {
            return Err(Error::FrameTooSmall {
                width: w,
                height: h,
                levels,
                patch_size,
            });
        }
        let mut images = vec![Plane::new(w, h, frame.luma())];
        for _ in 1..levels {
            let next = images.last().unwrap().half();
            images.push(next);
        }
        let levels = images
            .into_iter()
            .map(PyramidLevel::new)
            .collect();
        Ok(Pyramid { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &PyramidLevel {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_has_zero_gradients() {
        let f = Frame::from_fn(64, 64, 0, |_, _| [90, 90, 90]).unwrap();
        let p = Pyramid::build(&f, 4, 8).unwrap();
        for level in p.levels() {
            assert!(level.grad_x().data().iter().all(|&g| g == 0.0));
            assert!(level.grad_y().data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn level_dimensions_halve() {
        let f = Frame::from_fn(128, 64, 0, |x, y| [(x ^ y) as u8, 0, 0]).unwrap();
        let p = Pyramid::build(&f, 3, 8).unwrap();
        let dims: Vec<_> = p.levels().iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(128, 64), (64, 32), (32, 16)]);
        for l in p.levels() {
            assert_eq!((l.grad_x().width(), l.grad_x().height()), (l.width(), l.height()));
            assert_eq!((l.grad_y().width(), l.grad_y().height()), (l.width(), l.height()));
        }
    }

    #[test]
    fn odd_dimensions_round_down() {
        let f = Frame::from_fn(67, 35, 0, |_, _| [0, 0, 0]).unwrap();
        let p = Pyramid::build(&f, 3, 8).unwrap();
        assert_eq!((p.level(1).width(), p.level(1).height()), (33, 17));
        assert_eq!((p.level(2).width(), p.level(2).height()), (16, 8));
    }

    #[test]
    fn ramp_gradient_closed_form() {
        // luma of (2x, 2x, 2x) is 2x, so the central difference is 2
        let f = Frame::from_fn(64, 32, 0, |x, _| {
            let v = (2 * x) as u8;
            [v, v, v]
        })
        .unwrap();
        let p = Pyramid::build(&f, 1, 8).unwrap();
        let l = p.level(0);
        for y in 0..32 {
            for x in 1..63 {
                assert!((l.grad_x().at(x, y) - 2.0).abs() < 1e-3);
                assert!(l.grad_y().at(x, y).abs() < 1e-3);
            }
            // replicated border halves the difference
            assert!((l.grad_x().at(0, y) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn too_small_for_depth() {
        let f = Frame::from_fn(32, 32, 0, |_, _| [0, 0, 0]).unwrap();
        assert!(matches!(Pyramid::build(&f, 4, 8), Err(Error::FrameTooSmall { .. })));
        assert!(Pyramid::build(&f, 3, 8).is_ok());
    }

    #[test]
    fn bilinear_sample_interpolates() {
        let p = Plane::new(2, 2, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(p.sample(0.5, 0.5), 15.0);
        assert_eq!(p.sample(-3.0, 0.0), 0.0);
        assert_eq!(p.sample(9.0, 9.0), 30.0);
    }
}
