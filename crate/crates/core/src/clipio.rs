//! Frame, label and dataset ingestion plus sliding-window clip extraction.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/<video_id>/frames/%06d.png
//! <root>/<split>/<video_id>/labels.txt
//! <root>/<split>/<video_id>/tracks.jsonl
//! ```

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::masking::{self, TrackedObjectSet};
use crate::tensor::Tensor;

/// A whole video as a `(c, F, H, W)` tensor with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Tensor,
    pub video_id: String,
    pub fps: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Tensor, video_id: impl Into<String>) -> Result<Self> {
        contract!(frames.ndim() == 4, "frames must be (c, F, H, W), got {:?}", frames.shape());
        contract!(
            frames.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "pixel values must lie in [0, 1]"
        );
        Ok(FrameSequence { frames, video_id: video_id.into(), fps: None })
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self) -> (usize, usize) {
        (self.frames.shape()[2], self.frames.shape()[3])
    }

    /// Frames `start..start + len` as a `(c, len, H, W)` tensor.
    pub fn slice(&self, start: usize, len: usize) -> Tensor {
        let (c, f, h, w) = self.frames.dims4();
        let plane = h * w;
        let mut out = Vec::with_capacity(c * len * plane);
        for ch in 0..c {
            let base = (ch * f + start) * plane;
            out.extend_from_slice(&self.frames.data()[base..base + len * plane]);
        }
        Tensor::from_vec(&[c, len, h, w], out).expect("slice shape")
    }

    /// Frame `t` as `(c, H, W)`.
    pub fn frame(&self, t: usize) -> Tensor {
        let (c, _, h, w) = self.frames.dims4();
        self.slice(t, 1).reshape(&[c, h, w]).expect("frame shape")
    }
}

/// A `(c, T, H, W)` window of consecutive frames centred on `center_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipWindow {
    pub data: Tensor,
    pub center_index: usize,
    pub video_id: String,
}

impl ClipWindow {
    pub fn start(&self) -> usize {
        self.center_index - self.data.shape()[1] / 2
    }
}

/// All stride-1 windows of `t` frames: `F - t + 1` of them.
pub fn sliding_windows(seq: &FrameSequence, t: usize) -> Result<Vec<ClipWindow>> {
    contract!(t % 2 == 1, "window length must be odd, got {t}");
    contract!(t <= seq.len(), "window length {t} exceeds {} frames", seq.len());
    Ok((0..=seq.len() - t)
        .map(|k| ClipWindow { data: seq.slice(k, t), center_index: k + t / 2, video_id: seq.video_id.clone() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthLabels {
    pub labels: Vec<u8>,
    pub video_id: String,
}

/// Parses one `0`/`1` token per line, or a single comma-separated line.
pub fn parse_labels(text: &str, expected_len: usize) -> Result<Vec<u8>> {
    let labels = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|tok| match tok {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(Error::Ingest(format!("invalid label token {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != expected_len {
        return Err(Error::Ingest(format!("expected {expected_len} labels, found {}", labels.len())));
    }
    Ok(labels)
}

pub fn load_labels(path: &Path, expected_len: usize) -> Result<GroundTruthLabels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels = parse_labels(&text, expected_len).map_err(|e| match e {
        Error::Ingest(msg) => Error::Ingest(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let video_id = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(GroundTruthLabels { labels, video_id })
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn frame_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Loads a directory of numbered images (`000001.png`, ...) as a
/// `(channels, F, H, W)` sequence, optionally resized to `target_size`
/// (height, width).
pub fn load_frame_dir(dir: &Path, channels: usize, target_size: Option<(usize, usize)>) -> Result<FrameSequence> {
    contract!(channels == 1 || channels == 3, "channels must be 1 or 3, got {channels}");
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        match frame_index(&path) {
            Some(idx) => files.push((idx, path)),
            None => return Err(Error::Ingest(format!("unexpected file name {}", path.display()))),
        }
    }
    if files.is_empty() {
        return Err(Error::Ingest(format!("no frames in {}", dir.display())));
    }
    files.sort();
    for pair in files.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Ingest(format!("duplicate frame index {} in {}", pair[0].0, dir.display())));
        }
        if pair[1].0 != pair[0].0 + 1 {
            return Err(Error::Ingest(format!("missing frame index {} in {}", pair[0].0 + 1, dir.display())));
        }
    }

    let mut native: Option<(u32, u32)> = None;
    let mut planes: Vec<Vec<f64>> = vec![Vec::new(); channels];
    let mut size = (0, 0);
    for (_, path) in &files {
        let img = image::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
        let dims = (img.width(), img.height());
        match native {
            None => native = Some(dims),
            Some(d) if d != dims => {
                return Err(Error::Ingest(format!(
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    dims.0,
                    dims.1,
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        let img = match target_size {
            Some((h, w)) if (w as u32, h as u32) != dims => img.resize_exact(w as u32, h as u32, FilterType::Triangle),
            _ => img,
        };
        size = (img.height() as usize, img.width() as usize);
        if channels == 1 {
            planes[0].extend(img.to_luma8().pixels().map(|p| f64::from(p.0[0]) / 255.0));
        } else {
            let rgb = img.to_rgb8();
            for (ch, plane) in planes.iter_mut().enumerate() {
                plane.extend(rgb.pixels().map(|p| f64::from(p.0[ch]) / 255.0));
            }
        }
    }
    let data: Vec<f64> = planes.into_iter().flatten().collect();
    let frames = Tensor::from_vec(&[channels, files.len(), size.0, size.1], data)?;
    let video_id = dir
        .parent()
        .filter(|_| dir.file_name().is_some_and(|n| n == "frames"))
        .unwrap_or(dir)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameSequence::new(frames, video_id)
}

/// Quantizes a `(c, H, W)` frame in `[0, 1]` to an 8-bit PNG.
pub fn write_png(path: &Path, frame: &Tensor) -> Result<()> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let res = if c == 1 {
        let buf: Vec<u8> = frame.data().iter().map(|&v| q(v)).collect();
        image::GrayImage::from_raw(w as u32, h as u32, buf).expect("gray buffer").save(path)
    } else {
        let plane = h * w;
        let buf: Vec<u8> = (0..plane)
            .flat_map(|i| (0..3).map(move |ch| i + ch * plane))
            .map(|i| q(frame.data()[i]))
            .collect();
        image::RgbImage::from_raw(w as u32, h as u32, buf).expect("rgb buffer").save(path)
    };
    res.map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub frames: usize,
    /// Paths are relative to the dataset root.
    pub frames_dir: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub tracks: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Generator seed for synthetic corpora.
    #[serde(default)]
    pub seed: Option<u64>,
    pub train: Vec<VideoEntry>,
    pub test: Vec<VideoEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("serializable manifest");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn videos(&self, split: Split) -> &[VideoEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn load_video(&self, entry: &VideoEntry) -> Result<Video> {
        let mut frames = load_frame_dir(&self.root.join(&entry.frames_dir), self.channels, Some((self.height, self.width)))?;
        frames.video_id = entry.id.clone();
        if frames.len() != entry.frames {
            return Err(Error::Ingest(format!(
                "video {} has {} frames, manifest says {}",
                entry.id,
                frames.len(),
                entry.frames
            )));
        }
        let mut labels = load_labels(&self.root.join(&entry.labels), entry.frames)?;
        labels.video_id = entry.id.clone();
        let tracks = entry
            .tracks
            .as_ref()
            .map(|p| masking::load_tracks(&self.root.join(p), (self.height, self.width), entry.frames))
            .transpose()?;
        Ok(Video { frames, labels, tracks })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Video>> {
        self.videos(split).iter().map(|e| self.load_video(e)).collect()
    }
}

/// A loaded video with its labels and, when available, its tracks.
#[derive(Clone, Debug)]
pub struct Video {
    pub frames: FrameSequence,
    pub labels: GroundTruthLabels,
    pub tracks: Option<TrackedObjectSet>,
}
