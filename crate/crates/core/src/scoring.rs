//! Inference-time anomaly scoring and frame-level evaluation.
//!
//! Per video: reconstruct the middle frame of every sliding window, take the
//! per-pixel Euclidean error, score each frame by its worst patch mean, pad
//! the uncovered edge frames, median-filter in time and min-max normalize.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clipio::{sliding_windows, DatasetManifest, FrameSequence, Split, Video};
use crate::error::{contract, Error, Result};
use crate::model::ModelState;
use crate::par;
use crate::tensor::Tensor;

/// Windows reconstructed per forward call.
const SCORE_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub patch: usize,
    pub median: usize,
    pub normalize: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { patch: 16, median: 17, normalize: true }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.patch >= 1, "patch size must be >= 1");
        contract!(self.median % 2 == 1, "median window must be odd, got {}", self.median);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    /// `(H, W)`, non-negative.
    pub values: Tensor,
    pub frame_index: usize,
    pub video_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Filtered,
    Normalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    pub video_id: String,
    pub stage: Stage,
}

/// Middle-frame reconstructions `(frame_index, (c, H, W))` for every window.
pub fn reconstruct_video(state: &ModelState, seq: &FrameSequence) -> Result<Vec<(usize, Tensor)>> {
    let t = state.config.clip_len();
    contract!(seq.len() >= t, "video {} has {} frames, need {t}", seq.video_id, seq.len());
    let windows = sliding_windows(seq, t)?;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(SCORE_BATCH) {
        let clips: Vec<Tensor> = chunk.iter().map(|w| w.data.clone()).collect();
        let (rec, _) = state.forward_batch(&clips, false)?;
        let (_, c, h, w) = rec.dims4();
        for (i, win) in chunk.iter().enumerate() {
            let frame = Tensor::from_vec(&[c, h, w], rec.outer(i).to_vec())?;
            out.push((win.center_index, frame));
        }
    }
    Ok(out)
}

/// Per-pixel `sqrt(sum_c (x - x_hat)^2)` for `(c, H, W)` frames.
pub fn pixel_error_map(x: &Tensor, x_hat: &Tensor) -> Result<ErrorMap> {
    x.check_same_shape(x_hat)?;
    contract!(x.ndim() == 3, "frames must be (c, H, W), got {:?}", x.shape());
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let plane = h * w;
    let values = (0..plane)
        .map(|i| {
            (0..c)
                .map(|ch| {
                    let d = x.data()[ch * plane + i] - x_hat.data()[ch * plane + i];
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(ErrorMap { values: Tensor::from_vec(&[h, w], values)?, frame_index: 0, video_id: String::new() })
}

/// Largest mean over a `patch x patch` grid anchored at the origin. Edge
/// patches that run past the border are averaged over the pixels they cover.
pub fn frame_score(map: &ErrorMap, patch: usize) -> f64 {
    let (h, w) = (map.values.shape()[0], map.values.shape()[1]);
    let v = map.values.data();
    let mut best = f64::NEG_INFINITY;
    for y0 in (0..h).step_by(patch) {
        for x0 in (0..w).step_by(patch) {
            let (y1, x1) = ((y0 + patch).min(h), (x0 + patch).min(w));
            let sum: f64 = (y0..y1).flat_map(|y| &v[y * w + x0..y * w + x1]).sum();
            best = best.max(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    best
}

/// Centred running median with replicate padding; length preserving.
pub fn median_filter(series: &ScoreSeries, window: usize) -> Result<ScoreSeries> {
    contract!(window % 2 == 1, "median window must be odd, got {window}");
    let s = &series.scores;
    let half = window / 2;
    let n = s.len() as isize;
    let mut buf = Vec::with_capacity(window);
    let scores = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend((i - half as isize..=i + half as isize).map(|j| s[j.clamp(0, n - 1) as usize]));
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect();
    Ok(ScoreSeries { scores, video_id: series.video_id.clone(), stage: Stage::Filtered })
}

/// `(s - min) / (max - min)`; a constant series maps to zeros.
pub fn normalize_per_video(series: &ScoreSeries) -> ScoreSeries {
    let min = series.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let scores = series
        .scores
        .iter()
        .map(|&s| if range > 0.0 { (s - min) / range } else { 0.0 })
        .collect();
    ScoreSeries { scores, video_id: series.video_id.clone(), stage: Stage::Normalized }
}

/// Area under the ROC curve: the probability that a random positive outscores
/// a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    contract!(scores.len() == labels.len(), "{} scores vs {} labels", scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    contract!(pos > 0 && neg > 0, "AUC needs both classes ({pos} positive, {neg} negative)");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Rank sum of positives with average ranks over tie groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg_rank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Extends scores for frames `(t-1)/2 ..= F-1-(t-1)/2` to all `F` frames by
/// repeating the nearest covered score.
pub fn align_scores(covered: &[f64], frames: usize, t: usize) -> Vec<f64> {
    let half = t / 2;
    (0..frames)
        .map(|i| {
            let k = i.saturating_sub(half).min(covered.len().saturating_sub(1));
            covered[k]
        })
        .collect()
}

/// Median of per-scene AUCs (mean of the two central values for even counts).
pub fn aggregate_scene_auc(aucs: &[f64]) -> Result<f64> {
    contract!(!aucs.is_empty(), "no scene AUCs to aggregate");
    let mut v = aucs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// All score stages of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoScores {
    pub video_id: String,
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl VideoScores {
    /// The series evaluation uses: normalized when enabled, else filtered.
    pub fn final_scores(&self, normalize: bool) -> &[f64] {
        if normalize {
            &self.normalized
        } else {
            &self.filtered
        }
    }
}

/// Turns raw covered-frame scores into all three stages.
pub fn post_process(video_id: &str, covered: &[f64], frames: usize, t: usize, cfg: &ScoringConfig) -> Result<VideoScores> {
    let raw = ScoreSeries { scores: align_scores(covered, frames, t), video_id: video_id.to_string(), stage: Stage::Raw };
    let filtered = median_filter(&raw, cfg.median)?;
    let normalized = if cfg.normalize { normalize_per_video(&filtered).scores } else { filtered.scores.clone() };
    Ok(VideoScores { video_id: video_id.to_string(), raw: raw.scores, filtered: filtered.scores, normalized })
}

pub fn score_video(state: &ModelState, seq: &FrameSequence, cfg: &ScoringConfig) -> Result<VideoScores> {
    cfg.validate()?;
    let recs = reconstruct_video(state, seq)?;
    let covered = recs
        .iter()
        .map(|(idx, rec)| {
            let mut map = pixel_error_map(&seq.frame(*idx), rec)?;
            map.frame_index = *idx;
            Ok(frame_score(&map, cfg.patch))
        })
        .collect::<Result<Vec<f64>>>()?;
    post_process(&seq.video_id, &covered, seq.len(), state.config.clip_len(), cfg)
}

/// Scores every video, in parallel across videos.
pub fn score_videos(state: &ModelState, videos: &[Video], cfg: &ScoringConfig) -> Result<Vec<VideoScores>> {
    par::map(videos.len(), |i| score_video(state, &videos[i].frames, cfg)).into_iter().collect()
}

pub const SCORES_FILE: &str = "scores.csv";
pub const SCORING_FILE: &str = "scoring.json";

pub fn write_scores(out: &Path, scores: &[VideoScores], cfg: &ScoringConfig) -> Result<()> {
    for s in scores {
        let dir = out.join(&s.video_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut body = String::from("frame_index,raw,filtered,normalized\n");
        for i in 0..s.raw.len() {
            body.push_str(&format!("{i},{},{},{}\n", s.raw[i], s.filtered[i], s.normalized[i]));
        }
        let path = dir.join(SCORES_FILE);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    let path = out.join(SCORING_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).expect("serializable") + "\n")
        .map_err(|e| Error::io(&path, e))
}

pub fn read_scores(dir: &Path, video_id: &str) -> Result<VideoScores> {
    let path = dir.join(video_id).join(SCORES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut s = VideoScores { video_id: video_id.to_string(), raw: vec![], filtered: vec![], normalized: vec![] };
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |c: &str| {
            c.parse::<f64>()
                .map_err(|e| Error::Ingest(format!("{}:{}: {e}", path.display(), n + 1)))
        };
        if cols.len() != 4 {
            return Err(Error::Ingest(format!("{}:{}: expected 4 columns", path.display(), n + 1)));
        }
        s.raw.push(parse(cols[1])?);
        s.filtered.push(parse(cols[2])?);
        s.normalized.push(parse(cols[3])?);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_video_auc: BTreeMap<String, f64>,
    /// Videos left out of the per-video table because they have one class.
    pub skipped: Vec<String>,
    pub dataset_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_scene_auc: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scene_median_auc: Option<f64>,
    pub normalized: bool,
}

/// Scene name -> video ids.
pub type SceneMap = BTreeMap<String, Vec<String>>;

/// Frame-level AUCs from per-video scores and labels.
pub fn evaluate(scores: &[VideoScores], labels: &BTreeMap<String, Vec<u8>>, normalize: bool, scenes: Option<&SceneMap>) -> Result<EvalReport> {
    let mut per_video = BTreeMap::new();
    let mut skipped = Vec::new();
    let (mut all_s, mut all_l) = (Vec::new(), Vec::new());
    let lookup: BTreeMap<&str, &VideoScores> = scores.iter().map(|s| (s.video_id.as_str(), s)).collect();
    for s in scores {
        let l = labels
            .get(&s.video_id)
            .ok_or_else(|| Error::Ingest(format!("no labels for video {}", s.video_id)))?;
        let f = s.final_scores(normalize);
        contract!(f.len() == l.len(), "video {}: {} scores vs {} labels", s.video_id, f.len(), l.len());
        all_s.extend_from_slice(f);
        all_l.extend_from_slice(l);
        match roc_auc(f, l) {
            Ok(a) => {
                per_video.insert(s.video_id.clone(), a);
            }
            Err(_) => skipped.push(s.video_id.clone()),
        }
    }
    let dataset_auc = roc_auc(&all_s, &all_l)?;
    let (per_scene_auc, scene_median_auc) = match scenes {
        None => (None, None),
        Some(map) => {
            let mut per_scene = BTreeMap::new();
            for (scene, ids) in map {
                let (mut s, mut l) = (Vec::new(), Vec::new());
                for id in ids {
                    let vs = lookup.get(id.as_str()).ok_or_else(|| Error::Ingest(format!("scene {scene}: unknown video {id}")))?;
                    s.extend_from_slice(vs.final_scores(normalize));
                    l.extend_from_slice(&labels[id]);
                }
                per_scene.insert(scene.clone(), roc_auc(&s, &l)?);
            }
            let med = aggregate_scene_auc(&per_scene.values().copied().collect::<Vec<_>>())?;
            (Some(per_scene), Some(med))
        }
    };
    Ok(EvalReport { per_video_auc: per_video, skipped, dataset_auc, per_scene_auc, scene_median_auc, normalized: normalize })
}

/// Scores the test split of a dataset and returns the dataset-level AUC.
pub fn score_and_evaluate(state: &ModelState, manifest: &DatasetManifest, cfg: &ScoringConfig) -> Result<(Vec<VideoScores>, EvalReport)> {
    let videos = manifest.load_split(Split::Test)?;
    let scores = score_videos(state, &videos, cfg)?;
    let labels = videos.iter().map(|v| (v.frames.video_id.clone(), v.labels.labels.clone())).collect();
    let report = evaluate(&scores, &labels, cfg.normalize, None)?;
    Ok((scores, report))
}
