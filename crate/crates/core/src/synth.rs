//! Synthetic action videos: a textured sprite executing one of a few motion
//! programs over a static textured background, plus stratified splitting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{normal, seeded, SeededRng};
use crate::video::{Frame, Resolution, VideoClip, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionClass {
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
    Grow,
    Shrink,
    Bounce,
    Spin,
}

impl ActionClass {
    pub const ALL: [ActionClass; 8] = [
        ActionClass::MoveLeft,
        ActionClass::MoveRight,
        ActionClass::MoveUp,
        ActionClass::MoveDown,
        ActionClass::Grow,
        ActionClass::Shrink,
        ActionClass::Bounce,
        ActionClass::Spin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionClass::MoveLeft => "MOVE_LEFT",
            ActionClass::MoveRight => "MOVE_RIGHT",
            ActionClass::MoveUp => "MOVE_UP",
            ActionClass::MoveDown => "MOVE_DOWN",
            ActionClass::Grow => "GROW",
            ActionClass::Shrink => "SHRINK",
            ActionClass::Bounce => "BOUNCE",
            ActionClass::Spin => "SPIN",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s))
    }

    /// Tint mixed into the sprite texture.
    fn tint(self) -> [f64; 3] {
        match self {
            ActionClass::MoveLeft => [0.9, 0.2, 0.2],
            ActionClass::MoveRight => [0.2, 0.8, 0.2],
            ActionClass::MoveUp => [0.2, 0.3, 0.9],
            ActionClass::MoveDown => [0.9, 0.8, 0.1],
            ActionClass::Grow => [0.1, 0.8, 0.8],
            ActionClass::Shrink => [0.8, 0.2, 0.8],
            ActionClass::Bounce => [0.9, 0.5, 0.1],
            ActionClass::Spin => [0.5, 0.2, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: Vec<ActionClass>,
    pub clips_per_class: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    /// Sprite edge length in pixels at its nominal scale.
    pub sprite_size: usize,
    /// Texels per sprite edge.
    pub texture_cells: usize,
    /// Translation speed in pixels per frame.
    pub speed: f64,
    /// Weight of the class tint in the sprite colors, in `[0, 1]`.
    pub tint: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                ActionClass::MoveLeft,
                ActionClass::MoveRight,
                ActionClass::MoveUp,
                ActionClass::MoveDown,
            ],
            clips_per_class: 15,
            frames_per_clip: 32,
            height: 240,
            width: 320,
            sprite_size: 64,
            texture_cells: 8,
            speed: 4.0,
            tint: 0.4,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.classes.len() >= 2, "need at least two classes");
        for (i, c) in self.classes.iter().enumerate() {
            ensure!(
                !self.classes[..i].contains(c),
                "class {} listed twice",
                c.as_str()
            );
        }
        ensure!(self.clips_per_class >= 1, "clips_per_class must be at least 1");
        ensure!(self.frames_per_clip >= 2, "frames_per_clip must be at least 2");
        ensure!(self.texture_cells >= 2, "texture_cells must be at least 2");
        ensure!(self.sprite_size >= 4, "sprite_size must be at least 4");
        ensure!(self.speed >= 0.0, "speed must be non-negative");
        ensure!((0.0..=1.0).contains(&self.tint), "tint must be in [0, 1]");
        ensure!(self.noise >= 0.0, "noise must be non-negative");
        // the largest sprite (grow/shrink reach 1.4x) plus the translation
        // path must fit on the canvas
        let span = self.sprite_size as f64 * 1.5 + self.speed * (self.frames_per_clip - 1) as f64 + 4.0;
        ensure!(
            span <= self.height.min(self.width) as f64,
            "a {}x{} canvas cannot hold a {} px sprite moving {} px/frame for {} frames",
            self.height,
            self.width,
            self.sprite_size,
            self.speed,
            self.frames_per_clip
        );
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| String::from(c.as_str())).collect()
    }

    pub fn num_clips(&self) -> usize {
        self.classes.len() * self.clips_per_class
    }
}

/// Identifier shared by the HIGH and LOW versions of a rendered clip.
pub fn clip_stem(class: ActionClass, index: usize) -> String {
    format!("{}_{:03}", class.as_str().to_ascii_lowercase(), index)
}

/// Clip id of one resolution variant of `stem`.
pub fn clip_id(stem: &str, res: Resolution) -> String {
    match res {
        Resolution::High => format!("{}_hi", stem),
        Resolution::Low => format!("{}_lo", stem),
    }
}

/// Inverse of [`clip_id`].
pub fn split_clip_id(id: &str) -> Option<(&str, Resolution)> {
    if let Some(stem) = id.strip_suffix("_hi") {
        Some((stem, Resolution::High))
    } else {
        id.strip_suffix("_lo").map(|stem| (stem, Resolution::Low))
    }
}

/// Bilinear lookup in a `cells×cells` RGB grid at continuous texel
/// coordinates, clamped at the border.
fn sample_grid(grid: &[[f64; 3]], cells: usize, gx: f64, gy: f64) -> [f64; 3] {
    let max = (cells - 1) as f64;
    let (gx, gy) = (gx.clamp(0.0, max), gy.clamp(0.0, max));
    let (x0, y0) = (libm::floor(gx) as usize, libm::floor(gy) as usize);
    let (x1, y1) = ((x0 + 1).min(cells - 1), (y0 + 1).min(cells - 1));
    let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = grid[y0 * cells + x0][c] * (1.0 - fx) + grid[y0 * cells + x1][c] * fx;
        let bottom = grid[y1 * cells + x0][c] * (1.0 - fx) + grid[y1 * cells + x1][c] * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

struct Pose {
    cx: f64,
    cy: f64,
    /// Half edge length.
    half: f64,
    angle: f64,
}

fn motion_program(spec: &SynthSpec, class: ActionClass, rng: &mut SeededRng) -> Vec<Pose> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let l = spec.frames_per_clip;
    let half = spec.sprite_size as f64 / 2.0;
    let speed = spec.speed * rng.random_range(0.85..1.15);
    let travel = speed * (l - 1) as f64;
    let margin = half * 1.5 + 2.0;
    let mut pick = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { (lo + hi) / 2.0 };
    let (x_lo, x_hi) = (margin, w - margin);
    let (y_lo, y_hi) = (margin, h - margin);
    let cx = pick(x_lo, x_hi - travel);
    let cy = pick(y_lo, y_hi - travel);
    let mx = pick(x_lo, x_hi);
    let my = pick(y_lo, y_hi);
    let spin = pick(0.08, 0.16);
    let bounce = pick(0.5, 0.8) * travel.min(y_hi - y_lo);
    (0..l)
        .map(|t| {
            let tf = t as f64;
            let p = tf / (l - 1) as f64;
            let mut pose = Pose {
                cx: mx,
                cy: my,
                half,
                angle: 0.0,
            };
            match class {
                ActionClass::MoveRight => (pose.cx, pose.cy) = (cx + speed * tf, my),
                ActionClass::MoveLeft => (pose.cx, pose.cy) = (cx + travel - speed * tf, my),
                ActionClass::MoveDown => (pose.cx, pose.cy) = (mx, cy + speed * tf),
                ActionClass::MoveUp => (pose.cx, pose.cy) = (mx, cy + travel - speed * tf),
                ActionClass::Grow => pose.half = half * (0.6 + 0.8 * p),
                ActionClass::Shrink => pose.half = half * (1.4 - 0.8 * p),
                ActionClass::Bounce => {
                    let floor = (my + bounce / 2.0).min(y_hi);
                    pose.cy = floor - bounce * libm::fabs(libm::sin(core::f64::consts::TAU * p));
                }
                ActionClass::Spin => pose.angle = spin * tf,
            }
            pose
        })
        .collect()
}

/// Renders clip `index` of `class` at full canvas size (HIGH resolution).
///
/// Pixel values are quantized to multiples of 1/65535 so 16-bit image
/// files reproduce them exactly.
pub fn render_clip(spec: &SynthSpec, class: ActionClass, index: usize) -> Result<VideoClip> {
    spec.validate()?;
    let label = spec
        .classes
        .iter()
        .position(|&c| c == class)
        .ok_or_else(|| crate::error::invalid!("class {} is not part of the spec", class.as_str()))?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = seeded(spec.seed, ((label as u64) << 32) | index as u64);

    // static background: smooth low-contrast color field
    let bg_cells = 6;
    let bg_grid: Vec<[f64; 3]> = (0..bg_cells * bg_cells)
        .map(|_| {
            let base = rng.random_range(0.25..0.45);
            [0, 1, 2].map(|_| base + rng.random_range(-0.05..0.05))
        })
        .collect();
    let mut background = vec![0.0f64; h * w * CHANNELS];
    for y in 0..h {
        let gy = y as f64 / (h - 1) as f64 * (bg_cells - 1) as f64;
        for x in 0..w {
            let gx = x as f64 / (w - 1) as f64 * (bg_cells - 1) as f64;
            let c = sample_grid(&bg_grid, bg_cells, gx, gy);
            background[(y * w + x) * CHANNELS..][..CHANNELS].copy_from_slice(&c);
        }
    }

    let cells = spec.texture_cells;
    let tint = class.tint();
    let texture: Vec<[f64; 3]> = (0..cells * cells)
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.0);
            let mut texel = [0.0; 3];
            for (c, t) in texel.iter_mut().enumerate() {
                let own = (v + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
                *t = (1.0 - spec.tint) * own + spec.tint * tint[c];
            }
            texel
        })
        .collect();

    let poses = motion_program(spec, class, &mut rng);
    let mut frames = Vec::with_capacity(poses.len());
    for pose in &poses {
        let mut px = background.clone();
        let reach = pose.half * core::f64::consts::SQRT_2 + 2.0;
        let y0 = libm::floor(pose.cy - reach).max(0.0) as usize;
        let y1 = (libm::ceil(pose.cy + reach) as usize).min(h - 1);
        let x0 = libm::floor(pose.cx - reach).max(0.0) as usize;
        let x1 = (libm::ceil(pose.cx + reach) as usize).min(w - 1);
        let (sin, cos) = (libm::sin(pose.angle), libm::cos(pose.angle));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - pose.cx, y as f64 - pose.cy);
                // sprite-local coordinates in [-1, 1]
                let lx = (cos * dx + sin * dy) / pose.half;
                let ly = (-sin * dx + cos * dy) / pose.half;
                let edge = 1.0 - libm::fabs(lx).max(libm::fabs(ly));
                let alpha = (edge * pose.half + 0.5).clamp(0.0, 1.0);
                if alpha <= 0.0 {
                    continue;
                }
                let g = (cells - 1) as f64 / 2.0;
                let color = sample_grid(&texture, cells, (lx + 1.0) * g, (ly + 1.0) * g);
                let i = (y * w + x) * CHANNELS;
                for c in 0..CHANNELS {
                    px[i + c] = (1.0 - alpha) * px[i + c] + alpha * color[c];
                }
            }
        }
        let pixels = px
            .into_iter()
            .map(|v| {
                let noisy = v + spec.noise * normal(&mut rng);
                (libm::round(noisy.clamp(0.0, 1.0) * 65535.0) / 65535.0) as f32
            })
            .collect();
        frames.push(Frame::new(h, w, pixels)?);
    }
    VideoClip::new(frames, label, Resolution::High, clip_id(&clip_stem(class, index), Resolution::High))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    /// Not yet assigned by [`split`].
    All,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "test" => Some(SplitTag::Test),
            "all" => Some(SplitTag::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub label: usize,
    /// Relative to the dataset root.
    pub path: String,
    pub split: SplitTag,
    pub resolution: Resolution,
}

impl ManifestEntry {
    /// Clip id without its resolution suffix.
    pub fn stem(&self) -> &str {
        split_clip_id(&self.clip_id).map_or(self.clip_id.as_str(), |(s, _)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// HIGH and LOW entries for every clip `spec` describes, unsplit.
    pub fn for_spec(spec: &SynthSpec) -> Self {
        let mut entries = Vec::with_capacity(2 * spec.num_clips());
        for (label, &class) in spec.classes.iter().enumerate() {
            for i in 0..spec.clips_per_class {
                let stem = clip_stem(class, i);
                for res in [Resolution::High, Resolution::Low] {
                    let id = clip_id(&stem, res);
                    entries.push(ManifestEntry {
                        path: format!("clips/{}", id),
                        clip_id: id,
                        label,
                        split: SplitTag::All,
                        resolution: res,
                    });
                }
            }
        }
        Self { entries }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.clip_id.as_str()).collect();
        ids.sort_unstable();
        for pair in ids.windows(2) {
            ensure!(pair[0] != pair[1], "duplicate clip id {}", pair[0]);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_split(&self, tag: SplitTag) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == tag).collect()
    }

    pub fn with_resolution(&self, res: Resolution) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.resolution == res).collect()
    }

    pub fn get(&self, clip_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }
}

/// Stratified split by clip stem: HIGH and LOW siblings always land on the
/// same side. Each class contributes `round(fraction · n_class)` training
/// clips up to a largest-remainder correction that makes the overall count
/// `round(fraction · n)`, and keeps at least one clip on each side.
pub fn split(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    ensure!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train fraction must be in (0, 1), got {}",
        train_fraction
    );
    manifest.validate()?;
    let mut rng = seeded(seed, 0x5911);
    let num_classes = manifest.entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); num_classes];
    for e in &manifest.entries {
        let stem = String::from(e.stem());
        if !by_class[e.label].contains(&stem) {
            by_class[e.label].push(stem);
        }
    }
    for (label, stems) in by_class.iter_mut().enumerate() {
        if stems.is_empty() {
            continue;
        }
        ensure!(
            stems.len() >= 2,
            "class {} has {} clip(s); splitting needs at least 2",
            label,
            stems.len()
        );
        stems.sort();
        stems.shuffle(&mut rng);
    }

    let total: usize = by_class.iter().map(Vec::len).sum();
    let target = libm::round(train_fraction * total as f64) as usize;
    let mut quota: Vec<usize> = by_class
        .iter()
        .map(|s| libm::floor(train_fraction * s.len() as f64) as usize)
        .collect();
    let mut order: Vec<usize> = (0..num_classes).filter(|&c| !by_class[c].is_empty()).collect();
    order.shuffle(&mut rng);
    // stable sort keeps the shuffled order among equal remainders
    order.sort_by(|&a, &b| {
        let rem = |c: usize| train_fraction * by_class[c].len() as f64 - quota[c] as f64;
        rem(b).partial_cmp(&rem(a)).unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut assigned: usize = quota.iter().sum();
    for &c in order.iter().cycle().take(order.len()) {
        if assigned >= target {
            break;
        }
        quota[c] += 1;
        assigned += 1;
    }
    for (c, q) in quota.iter_mut().enumerate() {
        if !by_class[c].is_empty() {
            *q = (*q).clamp(1, by_class[c].len() - 1);
        }
    }

    let mut train = DatasetManifest::default();
    let mut test = DatasetManifest::default();
    for e in &manifest.entries {
        let stems = &by_class[e.label];
        let rank = stems.iter().position(|s| s == e.stem()).expect("stem collected above");
        let mut entry = e.clone();
        if rank < quota[e.label] {
            entry.split = SplitTag::Train;
            train.entries.push(entry);
        } else {
            entry.split = SplitTag::Test;
            test.entries.push(entry);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            frames_per_clip: 4,
            height: 96,
            width: 128,
            sprite_size: 16,
            speed: 3.0,
            clips_per_class: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn render_is_deterministic_and_quantized() {
        let spec = small();
        let a = render_clip(&spec, ActionClass::MoveRight, 1).unwrap();
        let b = render_clip(&spec, ActionClass::MoveRight, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a.size(), (96, 128));
        assert_eq!(a.label, 1);
        assert_eq!(a.source_id, "move_right_001_hi");
        for &p in a.frames()[0].pixels() {
            let q = (p as f64 * 65535.0).round() / 65535.0;
            assert_eq!(q as f32, p);
        }
        let c = render_clip(&spec, ActionClass::MoveRight, 0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_outside_spec_rejected() {
        assert!(render_clip(&small(), ActionClass::Spin, 0).is_err());
    }

    #[test]
    fn all_programs_render() {
        let spec = SynthSpec {
            classes: ActionClass::ALL.to_vec(),
            ..small()
        };
        for c in ActionClass::ALL {
            let clip = render_clip(&spec, c, 0).unwrap();
            assert!(clip.frames().iter().all(|f| f.pixels().iter().all(|p| (0.0..=1.0).contains(p))));
        }
    }

    #[test]
    fn oversized_motion_rejected() {
        let spec = SynthSpec {
            speed: 50.0,
            ..small()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn ids_round_trip() {
        assert_eq!(split_clip_id("grow_002_lo"), Some(("grow_002", Resolution::Low)));
        assert_eq!(split_clip_id("grow_002"), None);
        assert_eq!(ActionClass::parse("move_up"), Some(ActionClass::MoveUp));
    }
}
