//! Deterministic synthetic surveillance corpus.
//!
//! Every video shows the same static scene with a handful of bright disks
//! drifting at constant speed and bouncing elastically off the walls. Sprites
//! are rendered with motion blur (the footprint is averaged over the frame's
//! exposure interval). Test videos each contain one labelled event:
//!
//! * shape: a square sprite crosses the scene,
//! * motion: one disk moves `motion_factor` times faster, so it smears.
//!
//! Track files carry the ground-truth box of every sprite in every frame.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clipio::{self, DatasetManifest, Split, VideoEntry};
use crate::error::{contract, Error, Result};
use crate::masking::{BoundingBox, TrackedObjectSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames_per_video: usize,
    /// Disks per video.
    pub sprites: usize,
    pub disk_radius: [f64; 2],
    pub sprite_intensity: [f64; 2],
    /// Speed range in pixels per frame for normal motion.
    pub speed: [f64; 2],
    pub square_side: [f64; 2],
    pub motion_factor: f64,
    /// Inclusive range of anomaly event lengths, in frames.
    pub event_frames: [usize; 2],
    /// Sub-steps per frame used for motion blur.
    pub blur_samples: usize,
    /// Allowed fraction of anomalous test frames; generation fails outside it.
    pub anomaly_fraction: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            channels: 1,
            train_videos: 4,
            test_videos: 6,
            frames_per_video: 64,
            sprites: 3,
            disk_radius: [4.0, 5.5],
            sprite_intensity: [0.75, 0.95],
            speed: [0.8, 1.4],
            square_side: [11.0, 14.0],
            motion_factor: 4.0,
            event_frames: [16, 24],
            blur_samples: 8,
            anomaly_fraction: [0.1, 0.4],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.sprites > 0, "at least one sprite is required");
        contract!(self.height >= 8 && self.width >= 8, "frames must be at least 8x8");
        contract!(self.channels == 1 || self.channels == 3, "channels must be 1 or 3");
        contract!(self.blur_samples >= 1, "blur_samples must be >= 1");
        contract!(
            self.event_frames[0] >= 1
                && self.event_frames[0] <= self.event_frames[1]
                && self.event_frames[1] < self.frames_per_video,
            "event length range {:?} must fit in {} frames",
            self.event_frames,
            self.frames_per_video
        );
        for (name, r) in [
            ("disk_radius", self.disk_radius),
            ("sprite_intensity", self.sprite_intensity),
            ("speed", self.speed),
            ("square_side", self.square_side),
            ("anomaly_fraction", self.anomaly_fraction),
        ] {
            contract!(r[0] <= r[1] && r[0] >= 0.0, "{name} range {:?} is invalid", r);
        }
        contract!(self.sprite_intensity[1] <= 1.0, "sprite intensity must be <= 1");
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Disk { radius: f64 },
    Square { half: f64 },
}

impl Shape {
    fn extent(&self) -> f64 {
        match *self {
            Shape::Disk { radius } => radius,
            Shape::Square { half } => half,
        }
    }

    /// Anti-aliased coverage of pixel centre `(px, py)` by the shape at `(cx, cy)`.
    fn coverage(&self, px: f64, py: f64, cx: f64, cy: f64) -> f64 {
        let d = match *self {
            Shape::Disk { radius } => ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() - radius,
            Shape::Square { half } => (px - cx).abs().max((py - cy).abs()) - half,
        };
        (0.5 - d).clamp(0.0, 1.0)
    }
}

struct Sprite {
    id: u64,
    shape: Shape,
    intensity: f64,
    /// Position at each sub-step, `None` while the sprite is off stage.
    path: Vec<Option<(f64, f64)>>,
}

/// Elastic bounce inside `[lo, hi]`.
fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if *pos < lo {
        *pos = 2.0 * lo - *pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Simulates a sprite over `frames * sub` sub-steps. `speed_at(step)` scales
/// the base velocity; `active(step)` says whether it is on stage.
#[allow(clippy::too_many_arguments)]
fn simulate(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    id: u64,
    shape: Shape,
    intensity: f64,
    speed_at: impl Fn(usize) -> f64,
    active: impl Fn(usize) -> bool,
) -> Sprite {
    let sub = cfg.blur_samples;
    let steps = cfg.frames_per_video * sub;
    let e = shape.extent();
    let (lo_x, hi_x) = (e, cfg.width as f64 - e);
    let (lo_y, hi_y) = (e, cfg.height as f64 - e);
    let mut x = rng.random_range(lo_x..hi_x);
    let mut y = rng.random_range(lo_y..hi_y);
    let speed = uniform(rng, cfg.speed);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
    let mut path = Vec::with_capacity(steps);
    for k in 0..steps {
        path.push(active(k).then_some((x, y)));
        let s = speed_at(k) / sub as f64;
        x += vx * s;
        y += vy * s;
        reflect(&mut x, &mut vx, lo_x, hi_x);
        reflect(&mut y, &mut vy, lo_y, hi_y);
    }
    Sprite { id, shape, intensity, path }
}

/// Static scene shared by every video of a corpus.
fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (cfg.height, cfg.width);
    let fx = rng.random_range(1.0..2.5);
    let fy = rng.random_range(1.0..2.5);
    let mut bg: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            0.18 + 0.06 * (std::f64::consts::TAU * fx * x).sin() * (std::f64::consts::TAU * fy * y).cos() + 0.08 * y
        })
        .collect();
    // A couple of fixed scene fixtures (benches, kerbs).
    for _ in 0..2 {
        let bw = rng.random_range(w / 6..w / 3);
        let bh = rng.random_range(2..5);
        let x0 = rng.random_range(0..w - bw);
        let y0 = rng.random_range(0..h - bh);
        let level = rng.random_range(0.32..0.42);
        for y in y0..y0 + bh {
            bg[y * w + x0..y * w + x0 + bw].fill(level);
        }
    }
    bg
}

/// Renders frame `t`, returning the `(c, H, W)` pixels and per-sprite boxes.
fn render(cfg: &SynthConfig, bg: &[f64], sprites: &[Sprite], t: usize) -> (Tensor, Vec<(u64, BoundingBox)>) {
    let (h, w, sub) = (cfg.height, cfg.width, cfg.blur_samples);
    let mut img = bg.to_vec();
    let mut boxes = Vec::new();
    // Exposure window: the sub-steps of frame t.
    let (lo, hi) = (t * sub, (t + 1) * sub);
    for s in sprites {
        let samples: Vec<(f64, f64)> = s.path[lo..hi].iter().flatten().copied().collect();
        if samples.is_empty() {
            continue;
        }
        let e = s.shape.extent() + 1.0;
        let min_x = samples.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - e;
        let max_x = samples.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + e;
        let min_y = samples.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - e;
        let max_y = samples.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + e;
        let bbox = BoundingBox {
            x0: min_x.floor() as i64,
            y0: min_y.floor() as i64,
            x1: max_x.ceil() as i64 + 1,
            y1: max_y.ceil() as i64 + 1,
        }
        .clamp(h, w);
        let n = (hi - lo) as f64;
        for y in bbox.y0 as usize..bbox.y1 as usize {
            for x in bbox.x0 as usize..bbox.x1 as usize {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let a: f64 = samples.iter().map(|&(cx, cy)| s.shape.coverage(px, py, cx, cy)).sum::<f64>() / n;
                if a > 0.0 {
                    let v = &mut img[y * w + x];
                    *v = *v * (1.0 - a) + s.intensity * a;
                }
            }
        }
        if bbox.x1 > bbox.x0 && bbox.y1 > bbox.y0 {
            boxes.push((s.id, bbox));
        }
    }
    let mut data = Vec::with_capacity(cfg.channels * h * w);
    for _ in 0..cfg.channels {
        data.extend_from_slice(&img);
    }
    (Tensor::from_vec(&[cfg.channels, h, w], data).expect("frame shape"), boxes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Shape,
    Motion,
}

/// One generated video held in memory.
pub struct SynthVideo {
    pub id: String,
    pub frames: Vec<Tensor>,
    pub labels: Vec<u8>,
    pub tracks: TrackedObjectSet,
    pub event: Option<(EventKind, usize, usize)>,
}

fn generate_video(cfg: &SynthConfig, bg: &[f64], rng: &mut ChaCha8Rng, id: String, event: Option<EventKind>) -> SynthVideo {
    let f = cfg.frames_per_video;
    let sub = cfg.blur_samples;
    let window = event.map(|kind| {
        let len = rng.random_range(cfg.event_frames[0]..=cfg.event_frames[1]);
        let margin = ((f - len) / 6).max(1);
        let start = rng.random_range(margin..=f - len - margin.min(f - len));
        (kind, start, start + len)
    });
    let in_event = move |k: usize| window.is_some_and(|(_, s, e)| k >= s * sub && k < e * sub);
    let motion_target = match window {
        Some((EventKind::Motion, ..)) => Some(rng.random_range(0..cfg.sprites)),
        _ => None,
    };
    let mut sprites = Vec::new();
    for i in 0..cfg.sprites {
        let shape = Shape::Disk { radius: uniform(rng, cfg.disk_radius) };
        let intensity = uniform(rng, cfg.sprite_intensity);
        let fast = motion_target == Some(i);
        let factor = cfg.motion_factor;
        sprites.push(simulate(
            cfg,
            rng,
            i as u64,
            shape,
            intensity,
            |k| if fast && in_event(k) { factor } else { 1.0 },
            |_| true,
        ));
    }
    if let Some((EventKind::Shape, ..)) = window {
        let shape = Shape::Square { half: uniform(rng, cfg.square_side) / 2.0 };
        let intensity = uniform(rng, cfg.sprite_intensity);
        sprites.push(simulate(cfg, rng, cfg.sprites as u64, shape, intensity, |_| 1.0, in_event));
    }
    let mut frames = Vec::with_capacity(f);
    let mut tracks = TrackedObjectSet::new(f, cfg.height, cfg.width);
    for t in 0..f {
        let (img, boxes) = render(cfg, bg, &sprites, t);
        for (oid, b) in boxes {
            tracks.push(t, oid, b);
        }
        frames.push(img);
    }
    let labels = (0..f)
        .map(|t| u8::from(window.is_some_and(|(_, s, e)| t >= s && t < e)))
        .collect();
    SynthVideo { id, frames, labels, tracks, event: window }
}

/// Generates both splits in memory. Test video `i` gets a shape event when
/// `i` is even and a motion event when odd.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<(Vec<SynthVideo>, Vec<SynthVideo>)> {
    cfg.validate()?;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(cfg, &mut scene_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ee_d0f5_ce9e);
    let train = (0..cfg.train_videos)
        .map(|i| generate_video(cfg, &bg, &mut rng, format!("train_{i:02}"), None))
        .collect();
    let test: Vec<SynthVideo> = (0..cfg.test_videos)
        .map(|i| {
            let kind = if i % 2 == 0 { EventKind::Shape } else { EventKind::Motion };
            generate_video(cfg, &bg, &mut rng, format!("test_{i:02}"), Some(kind))
        })
        .collect();
    let total: usize = test.iter().map(|v| v.labels.len()).sum();
    if total > 0 {
        let anomalous: usize = test.iter().map(|v| v.labels.iter().map(|&l| l as usize).sum::<usize>()).sum();
        let frac = anomalous as f64 / total as f64;
        contract!(
            frac >= cfg.anomaly_fraction[0] && frac <= cfg.anomaly_fraction[1],
            "anomalous test fraction {frac:.3} outside {:?}",
            cfg.anomaly_fraction
        );
    }
    Ok((train, test))
}

/// Writes a synthetic corpus under `root` and returns its manifest.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64, root: &Path) -> Result<DatasetManifest> {
    let (train, test) = generate(cfg, seed)?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        height: cfg.height,
        width: cfg.width,
        channels: cfg.channels,
        seed: Some(seed),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, videos) in [(Split::Train, train), (Split::Test, test)] {
        for v in videos {
            let rel = Path::new(split.as_str()).join(&v.id);
            let frames_dir = rel.join("frames");
            let abs_frames = root.join(&frames_dir);
            if abs_frames.exists() {
                std::fs::remove_dir_all(&abs_frames).map_err(|e| Error::io(&abs_frames, e))?;
            }
            std::fs::create_dir_all(&abs_frames).map_err(|e| Error::io(&abs_frames, e))?;
            for (t, frame) in v.frames.iter().enumerate() {
                clipio::write_png(&abs_frames.join(format!("{t:06}.png")), frame)?;
            }
            let labels = rel.join("labels.txt");
            clipio::write_labels(&root.join(&labels), &v.labels)?;
            let tracks = rel.join("tracks.jsonl");
            v.tracks.write_jsonl(&root.join(&tracks))?;
            let entry = VideoEntry { id: v.id, frames: v.frames.len(), frames_dir, labels, tracks: Some(tracks) };
            match split {
                Split::Train => manifest.train.push(entry),
                Split::Test => manifest.test.push(entry),
            }
        }
    }
    manifest.save()?;
    Ok(manifest)
}
