//! Dense optical flow by inverse search over overlapping patches.
//!
//! Each pyramid level, from the coarsest down to `finest_scale`, places a
//! grid of square patches with 50% overlap over the previous frame. Every
//! patch is aligned independently against the next frame with
//! inverse-compositional Gauss-Newton on a mean-normalized SSD, starting
//! from the flow handed down by the coarser level. The per-patch
//! displacements are then densified by averaging the patches covering each
//! pixel, weighted per pixel by the inverse brightness residual. The field
//! at `finest_scale` is bilinearly upsampled to the input resolution.
//!
//! Patches are optimized in parallel, but every patch is a pure function
//! of its inputs and densification sums contributions in a fixed order, so
//! the output does not depend on the number of worker threads.

mod pyramid;

pub use pyramid::{Plane, Pyramid, PyramidLevel};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{FlowField, Frame};

/// How many pyramid levels to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PyramidDepth {
    /// As many levels as keep the coarsest side at least twice the patch size.
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisParams {
    /// Level at which estimation stops; 0 is full resolution.
    pub finest_scale: usize,
    pub patch_size: usize,
    pub gd_iterations: usize,
    pub use_variational_refinement: bool,
    pub pyramid_levels: PyramidDepth,
}

/// Gauss-Newton stops once the update is shorter than this (pixels).
const CONVERGED_STEP: f32 = 0.01;

impl Default for DisParams {
    fn default() -> Self {
        fast_preset()
    }
}

/// The low-latency operating point: no variational refinement, stop at
/// level 2, 8 px patches, 12 descent iterations.
pub fn fast_preset() -> DisParams {
    DisParams {
        finest_scale: 2,
        patch_size: 8,
        gd_iterations: 12,
        use_variational_refinement: false,
        pyramid_levels: PyramidDepth::Auto,
    }
}

impl DisParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 4 || !self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "patch_size must be even and at least 4, got {}",
                self.patch_size
            )));
        }
        if self.gd_iterations == 0 {
            return Err(Error::InvalidParameter("gd_iterations must be at least 1".into()));
        }
        if self.use_variational_refinement {
            return Err(Error::InvalidParameter("variational refinement is not supported".into()));
        }
        if let PyramidDepth::Fixed(n) = self.pyramid_levels {
            if self.finest_scale >= n {
                return Err(Error::InvalidParameter(format!(
                    "finest_scale {} must be below pyramid_levels {n}",
                    self.finest_scale
                )));
            }
        }
        Ok(())
    }

    /// Number of pyramid levels used for a `width x height` input.
    pub fn levels_for(&self, width: usize, height: usize) -> Result<usize> {
        let levels = match self.pyramid_levels {
            PyramidDepth::Fixed(n) => n,
            PyramidDepth::Auto => {
                let mut n = 0;
                let (mut w, mut h) = (width, height);
                while w.min(h) >= 2 * self.patch_size {
                    n += 1;
                    w /= 2;
                    h /= 2;
                }
                n
            }
        };
        let coarsest_fits = levels > 0
            && (width >> (levels - 1)) >= self.patch_size
            && (height >> (levels - 1)) >= self.patch_size;
        if levels <= self.finest_scale || !coarsest_fits {
            return Err(Error::FrameTooSmall {
                width,
                height,
                levels: levels.max(self.finest_scale + 1),
                patch_size: self.patch_size,
            });
        }
        Ok(levels)
    }
}

/// Dense `prev -> next` flow at the resolution of the inputs.
pub fn estimate_flow(prev: &Frame, next: &Frame, params: &DisParams) -> Result<FlowField> {
    if prev.size() != next.size() {
        return Err(Error::DimensionMismatch {
            what: "flow input frames",
            left: next.size(),
            right: prev.size(),
        });
    }
    params.validate()?;
    let levels = params.levels_for(prev.width(), prev.height())?;
    let (p0, p1) = rayon::join(
        || Pyramid::build(prev, levels, params.patch_size),
        || Pyramid::build(next, levels, params.patch_size),
    );
    let (p0, p1) = (p0?, p1?);
    Ok(estimate_on_pyramids(&p0, &p1, params))
}

/// Same as [`estimate_flow`] on prebuilt pyramids, so a frame's pyramid can
/// serve both the forward and backward estimate.
pub fn estimate_on_pyramids(prev: &Pyramid, next: &Pyramid, params: &DisParams) -> FlowField {
    assert_eq!(prev.len(), next.len(), "pyramid depth mismatch");
    let mut flow: Option<LevelFlow> = None;
    for level in (params.finest_scale..prev.len()).rev() {
        let (l0, l1) = (prev.level(level), next.level(level));
        let init = match &flow {
            None => LevelFlow::zeros(l0.width(), l0.height()),
            Some(f) => f.upsample(l0.width(), l0.height()),
        };
        flow = Some(refine_level(l0, l1, &init, params));
    }
    let top = prev.level(0);
    let out = flow.expect("at least one level").upsample(top.width(), top.height());
    FlowField::from_parts_unchecked(out.width, out.height, out.dx, out.dy)
}

#[derive(Clone, Debug)]
struct LevelFlow {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl LevelFlow {
    fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    /// Bilinear resize on pixel centers, displacements scaled per axis.
    fn upsample(&self, width: usize, height: usize) -> LevelFlow {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let cols = taps(self.width, width);
        let rows = taps(self.height, height);
        let scale_x = width as f32 / self.width as f32;
        let scale_y = height as f32 / self.height as f32;
        let sw = self.width;
        let mut dx = vec![0.0f32; width * height];
        let mut dy = vec![0.0f32; width * height];
        dx.par_chunks_mut(width)
            .zip(dy.par_chunks_mut(width))
            .zip(&rows)
            .for_each(|((rx, ry), &(y0, y1, fy))| {
                let lerp = |src: &[f32], x0: usize, x1: usize, fx: f32| {
                    let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
                    let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
                    top * (1.0 - fy) + bottom * fy
                };
                for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                    rx[x] = lerp(&self.dx, x0, x1, fx) * scale_x;
                    ry[x] = lerp(&self.dy, x0, x1, fx) * scale_y;
                }
            });
        LevelFlow { width, height, dx, dy }
    }
}

/// Source taps `(i0, i1, frac)` for resizing an axis of `src` samples to
/// `dst`, aligned on pixel centers and clamped at the borders.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let s = src as f32 / dst as f32;
    (0..dst)
        .map(|i| {
            let p = ((i as f32 + 0.5) * s - 0.5).clamp(0.0, (src - 1) as f32);
            let i0 = p as usize;
            (i0, (i0 + 1).min(src - 1), p - i0 as f32)
        })
        .collect()
}

/// Patch origins along one axis: stride `size / 2`, with a final patch
/// flush against the far border.
fn patch_origins(len: usize, size: usize) -> Vec<usize> {
    let stride = (size / 2).max(1);
    let mut v: Vec<usize> = (0..=len - size).step_by(stride).collect();
    if *v.last().unwrap() != len - size {
        v.push(len - size);
    }
    v
}

#[derive(Clone, Copy, Debug)]
struct PatchResult {
    x0: usize,
    u: f32,
    v: f32,
    /// Mean brightness of the matched target patch minus the source's.
    offset: f32,
}

fn refine_level(l0: &PyramidLevel, l1: &PyramidLevel, init: &LevelFlow, params: &DisParams) -> LevelFlow {
    let (w, h) = (l0.width(), l0.height());
    let ps = params.patch_size;
    let xs = patch_origins(w, ps);
    let ys = patch_origins(h, ps);

    let cols = xs.len();
    // build the gradients before the workers need them
    l0.grad_x();
    let patches: Vec<PatchResult> = ys
        .par_iter()
        .flat_map_iter(|&y0| {
            xs.iter()
                .map(move |&x0| {
                    let c = (y0 + ps / 2) * init.width + x0 + ps / 2;
                    align_patch(l0, l1, x0, y0, (init.dx[c], init.dy[c]), params)
                })
                .collect::<Vec<_>>()
        })
        .collect();


    // each patch votes for the pixels it covers, weighted per pixel by
    // how well it explains that pixel's brightness
    let mut dx = vec![0.0f32; w * h];
    let mut dy = vec![0.0f32; w * h];
    dx.par_chunks_mut(w)
        .zip(dy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            let mut acc_u = vec![0.0f32; w];
            let mut acc_v = vec![0.0f32; w];
            let mut acc_w = vec![0.0f32; w];
            for (pi, &y0) in ys.iter().enumerate() {
                if y < y0 || y >= y0 + ps {
                    continue;
                }
                for p in &patches[pi * cols..(pi + 1) * cols] {
                    for x in p.x0..p.x0 + ps {
                        let d = l1.image.sample(x as f32 + p.u, y as f32 + p.v) - l0.image.at(x, y) - p.offset;
                        let wgt = 1.0 / d.abs().max(1.0);
                        acc_u[x] += wgt * p.u;
                        acc_v[x] += wgt * p.v;
                        acc_w[x] += wgt;
                    }
                }
            }
            for x in 0..w {
                rx[x] = acc_u[x] / acc_w[x];
                ry[x] = acc_v[x] / acc_w[x];
            }
        });
    LevelFlow { width: w, height: h, dx, dy }
}

fn align_patch(
    l0: &PyramidLevel,
    l1: &PyramidLevel,
    x0: usize,
    y0: usize,
    (u0, v0): (f32, f32),
    params: &DisParams,
) -> PatchResult {
    let ps = params.patch_size;
    let n = ps * ps;

    let mut template = Vec::with_capacity(n);
    let mut jx = Vec::with_capacity(n);
    let mut jy = Vec::with_capacity(n);
    for y in y0..y0 + ps {
        for x in x0..x0 + ps {
            template.push(l0.image.at(x, y));
            jx.push(l0.grad_x().at(x, y));
            jy.push(l0.grad_y().at(x, y));
        }
    }
    let inv_n = 1.0 / n as f32;
    let t_mean = template.iter().sum::<f32>() * inv_n;
    let gx_mean = jx.iter().sum::<f32>() * inv_n;
    let gy_mean = jy.iter().sum::<f32>() * inv_n;
    for i in 0..n {
        template[i] -= t_mean;
        jx[i] -= gx_mean;
        jy[i] -= gy_mean;
    }
    let (mut hxx, mut hxy, mut hyy) = (0.0f32, 0.0f32, 0.0f32);
    for i in 0..n {
        hxx += jx[i] * jx[i];
        hxy += jx[i] * jy[i];
        hyy += jy[i] * jy[i];
    }
    // slight damping keeps edge-only patches from sliding along the edge
    let damping = 1e-3 * 0.5 * (hxx + hyy) + 1e-6;
    hxx += damping;
    hyy += damping;
    let det = hxx * hyy - hxy * hxy;

    let mut warped = vec![0.0f32; n];
    let sample = |u: f32, v: f32, out: &mut [f32]| -> f32 {
        l1.image.sample_patch(x0 as f32 + u, y0 as f32 + v, ps, out);
        out.iter().sum::<f32>() * inv_n
    };

    let (mut u, mut v) = (u0, v0);
    let limit = ps as f32;
    if det > 1e-6 {
        for _ in 0..params.gd_iterations {
            let mean = sample(u, v, &mut warped);
            let (mut bx, mut by) = (0.0f32, 0.0f32);
            for i in 0..n {
                let r = warped[i] - mean - template[i];
                bx += jx[i] * r;
                by += jy[i] * r;
            }
            let du = (hyy * bx - hxy * by) / det;
            let dv = (hxx * by - hxy * bx) / det;
            u -= du;
            v -= dv;
            let (ox, oy) = (u - u0, v - v0);
            let norm = (ox * ox + oy * oy).sqrt();
            if norm > limit {
                u = u0 + ox * limit / norm;
                v = v0 + oy * limit / norm;
            }
            if (du * du + dv * dv).sqrt() < CONVERGED_STEP {
                break;
            }
        }
    }
    // past the border the target is replicated edge pixels; a patch that
    // slid more than halfway out matched nothing real
    let half = (ps / 2) as f32;
    let outside = |pos: f32, len: usize| pos < -half || pos + ps as f32 > len as f32 + half;
    if outside(x0 as f32 + u, l0.width()) || outside(y0 as f32 + v, l0.height()) {
        (u, v) = (u0, v0);
    }
    let mean = sample(u, v, &mut warped);
    PatchResult {
        x0,
        u,
        v,
        offset: mean - t_mean,
    }
}
