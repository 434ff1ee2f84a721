//! Video data model, resolution degradation and unitization.
//!
//! Frames hold RGB pixels as `f32` in `[0, 1]`, row-major and channel-last.
//! Low-resolution clips are produced by area-averaging each frame down to
//! 12×16 and resampling it back up to 112×112 with a Catmull-Rom bicubic
//! kernel, so the upsampled frames carry no more information than the
//! 12×16 ones.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::Tensor;

pub const CHANNELS: usize = 3;

/// Height and width of the degraded frames.
pub const LOW_RES: (usize, usize) = (12, 16);

/// Common network input size for both resolutions.
pub const NET_RES: (usize, usize) = (112, 112);

/// Catmull-Rom parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Resolution {
    High,
    Low,
}

impl Resolution {
    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::High => "HIGH",
            Resolution::Low => "LOW",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "HIGH" => Some(Resolution::High),
            "LOW" => Some(Resolution::Low),
            _ => None,
        }
    }
}

/// One RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "frame dims must be positive");
        ensure!(
            pixels.len() == height * width * CHANNELS,
            "frame {}x{} needs {} values, got {}",
            height,
            width,
            height * width * CHANNELS,
            pixels.len()
        );
        ensure!(
            pixels.iter().all(|p| p.is_finite()),
            "frame contains non-finite pixels"
        );
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    fn clamp_unit(&mut self) {
        self.pixels.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    }
}

/// A labelled frame sequence at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    pub label: usize,
    pub resolution: Resolution,
    pub source_id: String,
}

impl VideoClip {
    pub fn new(
        frames: Vec<Frame>,
        label: usize,
        resolution: Resolution,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        ensure!(!frames.is_empty(), "a clip needs at least one frame");
        let (h, w) = (frames[0].height, frames[0].width);
        ensure!(
            frames.iter().all(|f| f.height == h && f.width == w),
            "all frames of a clip must share one size"
        );
        Ok(Self {
            frames,
            label,
            resolution,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` shared by all frames.
    pub fn size(&self) -> (usize, usize) {
        (self.frames[0].height, self.frames[0].width)
    }

    /// Same metadata, frames replaced by `f(frame)`.
    pub fn map_frames<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Frame) -> Result<Frame>,
    {
        let frames = self.frames.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(frames, self.label, self.resolution, self.source_id.clone())
    }
}

/// `delta` consecutive frames of a clip; `index` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoUnit {
    pub frames: Vec<Frame>,
    pub index: usize,
}

impl VideoUnit {
    /// Channel-first `[3, delta, H, W]` tensor of the unit.
    pub fn to_tensor(&self) -> Tensor {
        frames_to_tensor(&self.frames)
    }
}

/// Packs frames into a channel-first `[3, T, H, W]` tensor.
pub fn frames_to_tensor(frames: &[Frame]) -> Tensor {
    let t = frames.len();
    let (h, w) = (frames[0].height, frames[0].width);
    let plane = h * w;
    let mut data = vec![0.0f64; CHANNELS * t * plane];
    for (ti, f) in frames.iter().enumerate() {
        for (p, px) in f.pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[(c * t + ti) * plane + p] = px[c] as f64;
            }
        }
    }
    Tensor::from_vec(&[CHANNELS, t, h, w], data).expect("shape computed from frames")
}

/// Source taps and weights of an area-average resampling along one axis.
///
/// Output cell `o` covers `[o*n_in/n_out, (o+1)*n_in/n_out)` in source
/// coordinates; each source pixel contributes its overlap length. Working
/// in units of `1/n_out` keeps the overlaps integral.
fn area_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n_out)
        .map(|o| {
            let lo = o * n_in;
            let hi = (o + 1) * n_in;
            let first = lo / n_out;
            let last = (hi - 1) / n_out;
            (first..=last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) * n_out) - lo.max(i * n_out);
                    (overlap > 0).then(|| (i, overlap as f64 / n_in as f64))
                })
                .collect()
        })
        .collect()
}

/// Separable resampling of an interleaved `channels`-plane image with
/// per-axis tap lists. Accumulates in `f64`.
fn resample_separable(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    channels: usize,
    rows: &[Vec<(usize, f64)>],
    cols: &[Vec<(usize, f64)>],
) -> Vec<f64> {
    let out_h = rows.len();
    let out_w = cols.len();
    let mut tmp = vec![0.0f64; in_h * out_w * channels];
    for y in 0..in_h {
        let src_row = &src[y * in_w * channels..(y + 1) * in_w * channels];
        let tmp_row = &mut tmp[y * out_w * channels..(y + 1) * out_w * channels];
        for (ox, taps) in cols.iter().enumerate() {
            for c in 0..channels {
                let mut acc = 0.0;
                for &(ix, wt) in taps {
                    acc += wt * src_row[ix * channels + c];
                }
                tmp_row[ox * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f64; out_h * out_w * channels];
    let stride = out_w * channels;
    for (oy, taps) in rows.iter().enumerate() {
        let out_row = &mut out[oy * stride..(oy + 1) * stride];
        for &(iy, wt) in taps {
            let tmp_row = &tmp[iy * stride..(iy + 1) * stride];
            for (o, t) in out_row.iter_mut().zip(tmp_row) {
                *o += wt * t;
            }
        }
    }
    out
}

/// Area-weighted resize of a single-plane `f64` image (used by the flow
/// pyramid as well).
pub(crate) fn area_resize_plane(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    resample_separable(
        src,
        in_h,
        in_w,
        1,
        &area_taps(in_h, out_h),
        &area_taps(in_w, out_w),
    )
}

fn frame_from_f64(height: usize, width: usize, data: Vec<f64>) -> Frame {
    Frame {
        height,
        width,
        pixels: data.into_iter().map(|v| v as f32).collect(),
    }
}

/// Shrinks `frame` to `out_h × out_w`, each output pixel being the
/// area-weighted mean of the source region it covers.
pub fn average_downsample(frame: &Frame, out_h: usize, out_w: usize) -> Result<Frame> {
    ensure!(
        out_h > 0 && out_w > 0,
        "output dims must be positive, got {}x{}",
        out_h,
        out_w
    );
    ensure!(
        out_h <= frame.height && out_w <= frame.width,
        "cannot average-downsample {}x{} to larger {}x{}",
        frame.height,
        frame.width,
        out_h,
        out_w
    );
    let src: Vec<f64> = frame.pixels.iter().map(|&p| p as f64).collect();
    let out = resample_separable(
        &src,
        frame.height,
        frame.width,
        CHANNELS,
        &area_taps(frame.height, out_h),
        &area_taps(frame.width, out_w),
    );
    Ok(frame_from_f64(out_h, out_w, out))
}

/// Cubic convolution kernel with parameter `a`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Weights of the four taps `floor(s)-1 ..= floor(s)+2` for fractional
/// offset `t = s - floor(s)`.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    [
        cubic_kernel(1.0 + t, CUBIC_A),
        cubic_kernel(t, CUBIC_A),
        cubic_kernel(1.0 - t, CUBIC_A),
        cubic_kernel(2.0 - t, CUBIC_A),
    ]
}

/// Half-pixel-centered, edge-clamped bicubic taps along one axis.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in as i64 - 1;
    (0..n_out)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let base = libm::floor(s);
            let w = cubic_weights(s - base);
            let base = base as i64;
            (0..4)
                .map(|k| {
                    let idx = (base - 1 + k as i64).clamp(0, last) as usize;
                    (idx, w[k])
                })
                .collect()
        })
        .collect()
}

/// Resamples `frame` to `out_h × out_w` with separable Catmull-Rom cubic
/// convolution. Values are not clamped.
pub fn bicubic_upsample(frame: &Frame, out_h: usize, out_w: usize) -> Result<Frame> {
    ensure!(
        out_h > 0 && out_w > 0,
        "output dims must be positive, got {}x{}",
        out_h,
        out_w
    );
    ensure!(
        frame.height >= 2 && frame.width >= 2,
        "bicubic input must be at least 2x2, got {}x{}",
        frame.height,
        frame.width
    );
    let src: Vec<f64> = frame.pixels.iter().map(|&p| p as f64).collect();
    let out = resample_separable(
        &src,
        frame.height,
        frame.width,
        CHANNELS,
        &cubic_taps(frame.height, out_h),
        &cubic_taps(frame.width, out_w),
    );
    Ok(frame_from_f64(out_h, out_w, out))
}

/// Degrades one frame: returns the 12×16 intermediate and its 112×112
/// upsampled version, the latter clamped back into `[0, 1]`.
pub fn degrade_frame(frame: &Frame) -> Result<(Frame, Frame)> {
    let small = average_downsample(frame, LOW_RES.0, LOW_RES.1)?;
    let mut up = bicubic_upsample(&small, NET_RES.0, NET_RES.1)?;
    up.clamp_unit();
    Ok((small, up))
}

/// Low-resolution version of a high-resolution clip, at network size.
pub fn make_lr_clip(clip: &VideoClip) -> Result<VideoClip> {
    ensure!(
        clip.resolution == Resolution::High,
        "make_lr_clip expects a HIGH clip, got {}",
        clip.resolution.as_str()
    );
    let mut out = clip.map_frames(|f| degrade_frame(f).map(|(_, up)| up))?;
    out.resolution = Resolution::Low;
    Ok(out)
}

/// Brings a high-resolution clip to network size by area averaging.
pub fn resize_to_net(clip: &VideoClip) -> Result<VideoClip> {
    if clip.size() == NET_RES {
        return Ok(clip.clone());
    }
    clip.map_frames(|f| average_downsample(f, NET_RES.0, NET_RES.1))
}

/// Splits a clip into `ceil(L / delta)` consecutive units of `delta`
/// frames; a short final unit is padded by repeating the last frame.
pub fn unitize(clip: &VideoClip, delta: usize) -> Result<Vec<VideoUnit>> {
    ensure!(delta >= 1, "unit length must be at least 1");
    if clip.frames.is_empty() {
        return Err(invalid!("cannot unitize an empty clip"));
    }
    let units = clip
        .frames
        .chunks(delta)
        .enumerate()
        .map(|(i, chunk)| {
            let mut frames = chunk.to_vec();
            let last = chunk[chunk.len() - 1].clone();
            frames.resize(delta, last);
            VideoUnit {
                frames,
                index: i + 1,
            }
        })
        .collect();
    Ok(units)
}

/// Number of units `unitize` produces for `len` frames.
pub fn unit_count(len: usize, delta: usize) -> usize {
    len.div_ceil(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn gray(height: usize, width: usize, values: &[f32]) -> Frame {
        let pixels = values.iter().flat_map(|&v| [v, v, v]).collect();
        Frame::new(height, width, pixels).unwrap()
    }

    #[test]
    fn downsample_two_by_two_mean() {
        let f = gray(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let out = average_downsample(&f, 1, 1).unwrap();
        assert_eq!(out.get(0, 0, 0), 1.5);
    }

    #[test]
    fn downsample_constant() {
        let f = Frame::filled(240, 320, 0.7);
        let out = average_downsample(&f, 12, 16).unwrap();
        assert!(out.pixels().iter().all(|&p| (p - 0.7).abs() < 1e-6));
    }

    #[test]
    fn downsample_rejects_bad_dims() {
        let f = Frame::filled(8, 8, 0.1);
        assert!(average_downsample(&f, 0, 4).is_err());
        assert!(average_downsample(&f, 16, 4).is_err());
    }

    #[test]
    fn fractional_area_weights_sum_to_one() {
        for taps in area_taps(240, 112) {
            let s: f64 = taps.iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_weights_at_half() {
        let w = cubic_weights(0.5);
        let expected = [-0.0625, 0.5625, 0.5625, -0.0625];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bicubic_rejects_tiny_input() {
        let f = Frame::filled(1, 5, 0.2);
        assert!(bicubic_upsample(&f, 4, 4).is_err());
        let f = Frame::filled(3, 3, 0.2);
        assert!(bicubic_upsample(&f, 0, 4).is_err());
    }

    #[test]
    fn bicubic_constant() {
        let f = Frame::filled(12, 16, 0.3);
        let up = bicubic_upsample(&f, 112, 112).unwrap();
        assert!(up.pixels().iter().all(|&p| (p - 0.3).abs() < 1e-6));
    }

    #[test]
    fn lr_clip_requires_high() {
        let clip = VideoClip::new(vec![Frame::filled(24, 32, 0.5)], 0, Resolution::Low, "x").unwrap();
        assert!(make_lr_clip(&clip).is_err());
    }

    #[test]
    fn unitize_counts_and_padding() {
        let frames: Vec<Frame> = (0..40).map(|i| Frame::filled(2, 2, i as f32 / 40.0)).collect();
        let clip = VideoClip::new(frames.clone(), 1, Resolution::High, "c").unwrap();
        let units = unitize(&clip, 16).unwrap();
        assert_eq!(units.len(), 3);
        assert_eq!(units[2].index, 3);
        assert_eq!(&units[2].frames[..8], &frames[32..40]);
        assert!(units[2].frames[8..].iter().all(|f| f == &frames[39]));

        let clip16 = VideoClip::new(frames[..16].to_vec(), 1, Resolution::High, "c").unwrap();
        let units = unitize(&clip16, 16).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].frames, clip16.frames());
    }

    #[test]
    fn clip_rejects_mixed_sizes_and_empty() {
        assert!(VideoClip::new(Vec::new(), 0, Resolution::High, "e").is_err());
        let f = vec![Frame::filled(2, 2, 0.0), Frame::filled(2, 3, 0.0)];
        assert!(VideoClip::new(f, 0, Resolution::High, "m").is_err());
    }

    #[test]
    fn tensor_layout_is_channel_first() {
        let mut f = Frame::filled(2, 3, 0.0);
        f.set(1, 2, 1, 0.5);
        let t = frames_to_tensor(&[f.clone(), f]);
        assert_eq!(t.dims(), &[3, 2, 2, 3]);
        // channel 1, time 1, row 1, col 2
        assert_eq!(t.data()[((1 * 2 + 1) * 2 + 1) * 3 + 2], 0.5);
    }
}
