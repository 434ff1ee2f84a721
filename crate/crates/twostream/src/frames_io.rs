//! Clips on disk: one directory per clip holding `00001.png`, `00002.png`,
//! … as 16-bit RGB PNGs.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use twostream_core::video::{Frame, Resolution, VideoClip};

use crate::error::{Error, IoContext, Result};

const MAX_LEVEL: f32 = 65535.0;

pub fn frame_file_name(index: usize) -> String {
    format!("{:05}.png", index + 1)
}

/// Nearest 16-bit level of each pixel, clamped to `[0, 1]`.
pub fn quantize(p: f32) -> u16 {
    (p.clamp(0.0, 1.0) * MAX_LEVEL).round() as u16
}

pub fn dequantize(level: u16) -> f32 {
    level as f32 / MAX_LEVEL
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    // the encoder takes 16-bit samples in native byte order
    let levels: Vec<u8> = frame
        .pixels()
        .iter()
        .flat_map(|&p| quantize(p).to_ne_bytes())
        .collect();
    let file = fs::File::create(path).at(path)?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub);
    encoder
        .write_image(
            &levels,
            frame.width() as u32,
            frame.height() as u32,
            ExtendedColorType::Rgb16,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.into_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.into_raw().into_iter().map(dequantize).collect();
    Ok(Frame::new(h, w, pixels)?)
}

/// Writes every frame of `clip` into `dir`, creating it. Stale frames from
/// a longer earlier clip are removed.
pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (i, frame) in clip.frames().iter().enumerate() {
        write_frame(&dir.join(frame_file_name(i)), frame)?;
    }
    for stale in frame_paths(dir)?.into_iter().skip(clip.len()) {
        fs::remove_file(&stale).at(&stale)?;
    }
    Ok(())
}

/// Frame files of a clip directory in playback order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let is_frame = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".png"))
            .is_some_and(|stem| stem.len() == 5 && stem.bytes().all(|b| b.is_ascii_digit()));
        if is_frame {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn read_clip(dir: &Path, label: usize, resolution: Resolution, id: &str) -> Result<VideoClip> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::format(dir, "no frame files"));
    }
    let frames = paths.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    Ok(VideoClip::new(frames, label, resolution, id)?)
}
