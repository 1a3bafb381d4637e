//! Object masks for pseudo-anomaly placement.
//!
//! Tracks come from `tracks.jsonl` files (one `{frame, object_id, box}`
//! object per line, boxes as inclusive-exclusive `[x0, y0, x1, y1]`). A mask
//! picks one tracked object uniformly among those visible in the window and
//! rasterizes its box in every frame where it is tracked.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box, inclusive-exclusive pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoundingBox {
    pub fn clamp(self, height: usize, width: usize) -> Self {
        let (h, w) = (height as i64, width as i64);
        let x0 = self.x0.clamp(0, w);
        let y0 = self.y0.clamp(0, h);
        BoundingBox { x0, y0, x1: self.x1.clamp(x0, w), y1: self.y1.clamp(y0, h) }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as i64, y as i64);
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One line of a track file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub frame: usize,
    pub object_id: i64,
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackedObjectSet {
    pub frames: Vec<Vec<(u64, BoundingBox)>>,
    pub height: usize,
    pub width: usize,
}

impl TrackedObjectSet {
    pub fn new(num_frames: usize, height: usize, width: usize) -> Self {
        TrackedObjectSet { frames: vec![Vec::new(); num_frames], height, width }
    }

    pub fn push(&mut self, frame: usize, object_id: u64, bbox: BoundingBox) {
        if frame >= self.frames.len() {
            self.frames.resize(frame + 1, Vec::new());
        }
        self.frames[frame].push((object_id, bbox.clamp(self.height, self.width)));
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Object ids present in at least one frame of `start..start + len`.
    pub fn ids_in(&self, start: usize, len: usize) -> BTreeSet<u64> {
        self.frames
            .iter()
            .skip(start)
            .take(len)
            .flat_map(|f| f.iter().map(|(id, _)| *id))
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (frame, objs) in self.frames.iter().enumerate() {
            for (id, b) in objs {
                let rec = TrackRecord { frame, object_id: *id as i64, bbox: [b.x0, b.y0, b.x1, b.y1] };
                serde_json::to_writer(&mut out, &rec).expect("serializable");
                out.push(b'\n');
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a track file. `num_frames` sizes the per-frame table; frames with
/// no entries stay empty.
pub fn load_tracks(path: &Path, frame_size: (usize, usize), num_frames: usize) -> Result<TrackedObjectSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = TrackedObjectSet::new(num_frames, frame_size.0, frame_size.1);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Ingest(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if rec.object_id < 0 {
            return Err(Error::Ingest(format!(
                "{}:{}: negative object_id {}",
                path.display(),
                lineno + 1,
                rec.object_id
            )));
        }
        let [x0, y0, x1, y1] = rec.bbox;
        set.push(rec.frame, rec.object_id as u64, BoundingBox { x0, y0, x1, y1 });
    }
    Ok(set)
}

/// Binary `(c, T, H, W)` mask, identical across channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSequence {
    pub mask: Tensor,
    /// `None` for the full-frame fallback.
    pub object_id: Option<u64>,
}

impl MaskSequence {
    pub fn check_binary(&self) -> Result<()> {
        contract!(
            self.mask.data().iter().all(|&m| m == 0.0 || m == 1.0),
            "mask entries must be exactly 0 or 1"
        );
        Ok(())
    }

    /// The `(c, H, W)` slice for frame `t`.
    pub fn frame(&self, t: usize) -> Tensor {
        let (c, tt, h, w) = self.mask.dims4();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let base = (ch * tt + t) * h * w;
            out.extend_from_slice(&self.mask.data()[base..base + h * w]);
        }
        Tensor::from_vec(&[c, h, w], out).expect("frame shape")
    }
}

pub fn full_frame_fallback(shape: (usize, usize, usize, usize)) -> MaskSequence {
    let (c, t, h, w) = shape;
    MaskSequence { mask: Tensor::full(&[c, t, h, w], 1.0), object_id: None }
}

/// Picks one object uniformly among the ids visible in
/// `start..start + len` and rasterizes its boxes; falls back to a full-frame
/// mask when the window has no tracked objects.
pub fn random_object_mask<R: Rng + ?Sized>(
    tracks: &TrackedObjectSet,
    start: usize,
    len: usize,
    channels: usize,
    rng: &mut R,
) -> Result<MaskSequence> {
    contract!(
        start + len <= tracks.num_frames(),
        "window {}..{} exceeds {} tracked frames",
        start,
        start + len,
        tracks.num_frames()
    );
    let (h, w) = (tracks.height, tracks.width);
    let ids: Vec<u64> = tracks.ids_in(start, len).into_iter().collect();
    if ids.is_empty() {
        return Ok(full_frame_fallback((channels, len, h, w)));
    }
    let chosen = ids[rng.random_range(0..ids.len())];
    Ok(rasterize(tracks, start, len, channels, chosen))
}

pub(crate) fn rasterize(tracks: &TrackedObjectSet, start: usize, len: usize, channels: usize, id: u64) -> MaskSequence {
    let (h, w) = (tracks.height, tracks.width);
    let mut plane = vec![0.0; len * h * w];
    for t in 0..len {
        for (oid, b) in &tracks.frames[start + t] {
            if *oid != id {
                continue;
            }
            for y in b.y0..b.y1 {
                let row = &mut plane[(t * h + y as usize) * w..][..w];
                row[b.x0 as usize..b.x1 as usize].fill(1.0);
            }
        }
    }
    let mut data = Vec::with_capacity(channels * plane.len());
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    MaskSequence { mask: Tensor::from_vec(&[channels, len, h, w], data).expect("mask shape"), object_id: Some(id) }
}
