//! Dense optical flow and its HSL image encoding.
//!
//! Flow is estimated coarse-to-fine with a quadratic (Horn–Schunck style)
//! energy: linearized brightness constancy plus first-order smoothness.
//! Each pyramid level warps the second frame by the current estimate and
//! solves for an increment with successive over-relaxation sweeps.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::video::{area_resize_plane, Frame, VideoClip, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Smoothness weight relative to the data term (intensities in [0, 1]).
    pub alpha: f64,
    /// Pyramid downsampling factor.
    pub ratio: f64,
    /// Coarsest level keeps both dims at or above this.
    pub min_size: usize,
    /// Warping (fixed-point) iterations per level.
    pub outer_iterations: usize,
    /// SOR sweeps per warping iteration.
    pub inner_iterations: usize,
    pub sor_omega: f64,
    /// Flow magnitude (px) mapped to full saturation.
    pub s_max: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            ratio: 0.5,
            min_size: 16,
            outer_iterations: 3,
            inner_iterations: 30,
            sor_omega: 1.8,
            s_max: 8.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0, "flow alpha must be positive");
        ensure!(
            self.ratio > 0.0 && self.ratio < 1.0,
            "pyramid ratio must be in (0, 1)"
        );
        ensure!(self.min_size >= 2, "pyramid min_size must be at least 2");
        ensure!(
            self.sor_omega > 0.0 && self.sor_omega < 2.0,
            "SOR omega must be in (0, 2)"
        );
        ensure!(self.s_max > 0.0, "saturation normalization must be positive");
        Ok(())
    }
}

/// Per-pixel displacement `(u, v)` in pixels; `u` along x, `v` along y.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        Self {
            height,
            width,
            u: vec![u; height * width],
            v: vec![v; height * width],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// HSL-encoded flow: channel 0 hue, 1 saturation, 2 lightness.
pub type FlowImage = Frame;

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luminance(frame: &Frame) -> Self {
        let data = frame
            .pixels()
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        Self {
            h: frame.height(),
            w: frame.width(),
            data,
        }
    }

    #[inline]
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn resize_area(&self, h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: area_resize_plane(&self.data, self.h, self.w, h, w),
        }
    }

    /// Separable `[1 4 6 4 1]/16` blur with clamped borders.
    fn smooth(&self) -> Self {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = (0..5)
                    .map(|k| K[k] * self.at(y as isize, x as isize + k as isize - 2))
                    .sum();
            }
        }
        let mid = Plane {
            h: self.h,
            w: self.w,
            data: tmp,
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] = (0..5)
                    .map(|k| K[k] * mid.at(y as isize + k as isize - 2, x as isize))
                    .sum();
            }
        }
        Plane {
            h: self.h,
            w: self.w,
            data: out,
        }
    }

    /// Bilinear sample with edge clamping; `None` outside the image.
    fn sample(&self, y: f64, x: f64) -> Option<f64> {
        if y < 0.0 || x < 0.0 || y > (self.h - 1) as f64 || x > (self.w - 1) as f64 {
            return None;
        }
        let y0 = libm::floor(y);
        let x0 = libm::floor(x);
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.at(y0, x0);
        let b = self.at(y0, x0 + 1);
        let c = self.at(y0 + 1, x0);
        let d = self.at(y0 + 1, x0 + 1);
        Some((1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d))
    }
}

/// Half-pixel-centered bilinear resize of a flow component.
fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let plane = Plane {
        h,
        w,
        data: src.to_vec(),
    };
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            out.push(plane.sample(fy, fx).unwrap_or(0.0));
        }
    }
    out
}

/// Five-point central derivative `[1, −8, 0, 8, −1] / 12` along x and y.
fn gradients(img: &Plane) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; img.data.len()];
    let mut gy = vec![0.0; img.data.len()];
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let i = y as usize * img.w + x as usize;
            gx[i] = (img.at(y, x - 2) - 8.0 * img.at(y, x - 1) + 8.0 * img.at(y, x + 1)
                - img.at(y, x + 2))
                / 12.0;
            gy[i] = (img.at(y - 2, x) - 8.0 * img.at(y - 1, x) + 8.0 * img.at(y + 1, x)
                - img.at(y + 2, x))
                / 12.0;
        }
    }
    (gx, gy)
}

/// Refines `(u, v)` on one pyramid level in place.
fn refine_level(i1: &Plane, i2: &Plane, u: &mut [f64], v: &mut [f64], p: &FlowParams) {
    let (h, w) = (i1.h, i1.w);
    let n = h * w;
    for _ in 0..p.outer_iterations {
        // warp the second frame toward the first
        let mut warped = vec![0.0; n];
        let mut valid = vec![true; n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                match i2.sample(y as f64 + v[i], x as f64 + u[i]) {
                    Some(val) => warped[i] = val,
                    None => {
                        warped[i] = i1.data[i];
                        valid[i] = false;
                    }
                }
            }
        }
        let mean = Plane {
            h,
            w,
            data: warped.iter().zip(&i1.data).map(|(a, b)| 0.5 * (a + b)).collect(),
        };
        let (mut ix, mut iy) = gradients(&mean);
        let mut it: Vec<f64> = warped.iter().zip(&i1.data).map(|(a, b)| a - b).collect();
        for i in 0..n {
            if !valid[i] {
                ix[i] = 0.0;
                iy[i] = 0.0;
                it[i] = 0.0;
            }
        }

        // Per-pixel constants of the SOR update, solving for the totals
        // tu = u + du and tv = v + dv:
        //   tu = (α·Σ tu_n − gx·gy·dv − gx·gt + gx²·u) / (gx² + α·N)
        let alpha = p.alpha;
        let omega = p.sor_omega;
        let mut inv_u = vec![0.0; n];
        let mut inv_v = vec![0.0; n];
        let mut cross = vec![0.0; n];
        let mut rhs_u = vec![0.0; n];
        let mut rhs_v = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let nn = (x > 0) as usize + (x + 1 < w) as usize + (y > 0) as usize + (y + 1 < h) as usize;
                let an = alpha * nn as f64;
                let (gx, gy, gt) = (ix[i], iy[i], it[i]);
                inv_u[i] = 1.0 / (gx * gx + an);
                inv_v[i] = 1.0 / (gy * gy + an);
                cross[i] = gx * gy;
                rhs_u[i] = gx * gx * u[i] - gx * gt;
                rhs_v[i] = gy * gy * v[i] - gy * gt;
            }
        }
        let mut tu = u.to_vec();
        let mut tv = v.to_vec();
        for _ in 0..p.inner_iterations {
            for y in 0..h {
                let interior_row = y > 0 && y + 1 < h;
                for x in 0..w {
                    let i = y * w + x;
                    let (su, sv) = if interior_row && x > 0 && x + 1 < w {
                        (
                            tu[i - 1] + tu[i + 1] + tu[i - w] + tu[i + w],
                            tv[i - 1] + tv[i + 1] + tv[i - w] + tv[i + w],
                        )
                    } else {
                        let mut su = 0.0;
                        let mut sv = 0.0;
                        for (ok, j) in [
                            (x > 0, i.wrapping_sub(1)),
                            (x + 1 < w, i + 1),
                            (y > 0, i.wrapping_sub(w)),
                            (y + 1 < h, i + w),
                        ] {
                            if ok {
                                su += tu[j];
                                sv += tv[j];
                            }
                        }
                        (su, sv)
                    };
                    let dv = tv[i] - v[i];
                    let target = (alpha * su - cross[i] * dv + rhs_u[i]) * inv_u[i];
                    tu[i] += omega * (target - tu[i]);
                    let du = tu[i] - u[i];
                    let target = (alpha * sv - cross[i] * du + rhs_v[i]) * inv_v[i];
                    tv[i] += omega * (target - tv[i]);
                }
            }
        }
        u.copy_from_slice(&tu);
        v.copy_from_slice(&tv);
    }
}

/// Dense flow from `prev` to `next`: `next(x + u, y + v) ≈ prev(x, y)`.
pub fn estimate_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    ensure!(
        prev.height() == next.height() && prev.width() == next.width(),
        "flow frames differ in size: {}x{} vs {}x{}",
        prev.height(),
        prev.width(),
        next.height(),
        next.width()
    );
    ensure!(
        prev.height().min(prev.width()) >= params.min_size,
        "flow frames must be at least {}x{}",
        params.min_size,
        params.min_size
    );
    ensure!(
        prev.pixels().iter().chain(next.pixels()).all(|p| p.is_finite()),
        "flow frames contain non-finite pixels"
    );

    let mut levels = vec![(Plane::luminance(prev), Plane::luminance(next))];
    loop {
        let (a, b) = &levels[levels.len() - 1];
        let nh = libm::round(a.h as f64 * params.ratio) as usize;
        let nw = libm::round(a.w as f64 * params.ratio) as usize;
        if nh.min(nw) < params.min_size {
            break;
        }
        let next_level = (a.resize_area(nh, nw), b.resize_area(nh, nw));
        levels.push(next_level);
    }

    let (mut h, mut w) = (levels[levels.len() - 1].0.h, levels[levels.len() - 1].0.w);
    let mut u = vec![0.0; h * w];
    let mut v = vec![0.0; h * w];
    for (a, b) in levels.iter().rev() {
        if a.h != h || a.w != w {
            let su = a.w as f64 / w as f64;
            let sv = a.h as f64 / h as f64;
            u = resize_bilinear(&u, h, w, a.h, a.w)
                .into_iter()
                .map(|x| x * su)
                .collect();
            v = resize_bilinear(&v, h, w, a.h, a.w)
                .into_iter()
                .map(|x| x * sv)
                .collect();
            h = a.h;
            w = a.w;
        }
        refine_level(&a.smooth(), &b.smooth(), &mut u, &mut v, params);
    }
    Ok(FlowField {
        height: h,
        width: w,
        u,
        v,
    })
}

/// Hue of direction `atan2(v, u)` as a fraction of the full circle.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    if u == 0.0 && v == 0.0 {
        return 0.0;
    }
    let turn = libm::atan2(v, u) / core::f64::consts::TAU;
    // atan2 lies in [-π, π], so one wrap suffices
    let h = if turn < 0.0 { turn + 1.0 } else { turn };
    if h >= 1.0 {
        0.0
    } else {
        h
    }
}

/// Encodes flow as (hue = direction, saturation = |flow| / s_max clipped to
/// 1, lightness = 1). Zero vectors get hue 0 and saturation 0.
pub fn flow_to_hsl_image(flow: &FlowField, s_max: f64) -> Result<FlowImage> {
    ensure!(flow.is_finite(), "flow field contains non-finite values");
    ensure!(s_max > 0.0, "saturation normalization must be positive");
    let mut pixels = Vec::with_capacity(flow.u.len() * CHANNELS);
    for (&u, &v) in flow.u.iter().zip(&flow.v) {
        let mag = libm::sqrt(u * u + v * v);
        pixels.push(flow_hue(u, v) as f32);
        pixels.push((mag / s_max).min(1.0) as f32);
        pixels.push(1.0);
    }
    Frame::new(flow.height, flow.width, pixels)
}

/// Flow images of a clip: one per consecutive pair, with the last one
/// repeated so the result has as many frames as the input.
pub fn flow_clip(clip: &VideoClip, params: &FlowParams) -> Result<VideoClip> {
    ensure!(clip.len() >= 2, "flow needs at least two frames, got {}", clip.len());
    let frames = clip.frames();
    let mut images = Vec::with_capacity(frames.len());
    for pair in frames.windows(2) {
        let f = estimate_flow(&pair[0], &pair[1], params)?;
        images.push(flow_to_hsl_image(&f, params.s_max)?);
    }
    let last = images[images.len() - 1].clone();
    images.push(last);
    VideoClip::new(images, clip.label, clip.resolution, clip.source_id.clone())
}
