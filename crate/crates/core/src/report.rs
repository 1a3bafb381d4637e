//! Run reports: reconstruction panels, the anomaly-weight plot and a text
//! summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::clipio::{DatasetManifest, Split, Video};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scoring::pixel_error_map;
use crate::tensor::Tensor;
use crate::training::{describe_run, final_checkpoint, read_trace, TrainConfig, WeightTrace, RUN_CONFIG};

/// `original | reconstruction | residual` side by side as 8-bit grey. All
/// three are clamped to `[0, 1]`; the residual is the per-pixel error map.
pub fn panel(original: &Tensor, recon: &Tensor) -> Result<image::GrayImage> {
    let err = pixel_error_map(original, recon)?;
    let (c, h, w) = (original.shape()[0], original.shape()[1], original.shape()[2]);
    let plane = h * w;
    // Channel mean for display.
    let grey = |t: &Tensor, i: usize| (0..c).map(|ch| t.data()[ch * plane + i]).sum::<f64>() / c as f64;
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut img = image::GrayImage::new(3 * w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = [grey(original, i), grey(recon, i), err.values.data()[i]];
            for (k, v) in px.into_iter().enumerate() {
                img.put_pixel((k * w + x) as u32, y as u32, image::Luma([to_u8(v)]));
            }
        }
    }
    Ok(img)
}

fn save(img: &image::GrayImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))
}

const PLOT_W: u32 = 400;
const PLOT_H: u32 = 240;
const MARGIN: u32 = 20;

/// Line plot of sigma against step on a fixed `[0, 1]` vertical axis, with a
/// dotted reference line at 0.5.
pub fn sigma_plot(trace: &WeightTrace) -> image::GrayImage {
    let mut img = image::GrayImage::from_pixel(PLOT_W, PLOT_H, image::Luma([255]));
    let (x0, x1) = (MARGIN, PLOT_W - MARGIN);
    let (y0, y1) = (MARGIN, PLOT_H - MARGIN);
    for x in x0..=x1 {
        img.put_pixel(x, y1, image::Luma([0]));
        if x % 4 == 0 {
            img.put_pixel(x, (y0 + y1) / 2, image::Luma([160]));
        }
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, image::Luma([0]));
    }
    let last = trace.records.last().map_or(1, |r| r.0.max(1)) as f64;
    let to_px = |step: u64, sigma: f64| {
        let x = x0 as f64 + (x1 - x0) as f64 * step as f64 / last;
        let y = y1 as f64 - (y1 - y0) as f64 * sigma.clamp(0.0, 1.0);
        (x, y)
    };
    for pair in trace.records.windows(2) {
        let (ax, ay) = to_px(pair[0].0, pair[0].2);
        let (bx, by) = to_px(pair[1].0, pair[1].2);
        let n = ((bx - ax).abs().max((by - ay).abs()).ceil() as usize).max(1);
        for k in 0..=n {
            let f = k as f64 / n as f64;
            let (x, y) = ((ax + f * (bx - ax)).round() as u32, (ay + f * (by - ay)).round() as u32);
            img.put_pixel(x.min(PLOT_W - 1), y.min(PLOT_H - 1), image::Luma([0]));
        }
    }
    if let [only] = trace.records.as_slice() {
        let (x, y) = to_px(only.0, only.2);
        img.put_pixel(x as u32, y as u32, image::Luma([0]));
    }
    img
}

/// Frame shown for a video: the middle of its labelled event, else the
/// middle of the video, kept inside the covered range.
pub fn panel_frame(video: &Video, t: usize) -> usize {
    let labels = &video.labels.labels;
    let hits: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let pick = if hits.is_empty() { labels.len() / 2 } else { hits[hits.len() / 2] };
    let half = t / 2;
    pick.clamp(half, video.frames.len() - 1 - half)
}

fn reconstruct_frame(model: &ModelState, video: &Video, idx: usize) -> Result<Tensor> {
    let t = model.config.clip_len();
    let clip = video.frames.slice(idx - t / 2, t);
    let out = model.forward(&clip)?;
    let (c, _, h, w) = out.dims4();
    out.reshape(&[c, h, w])
}

pub struct ReportOutput {
    pub panels: Vec<PathBuf>,
    pub sigma_plot: Option<PathBuf>,
    pub summary: PathBuf,
}

/// Writes panels for every test video, the sigma plot for runs with a
/// learned or fixed weight, and `summary.txt`.
pub fn report(run: &Path, out: &Path) -> Result<ReportOutput> {
    let summary = describe_run(run)?;
    let cfg_path = run.join(RUN_CONFIG);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| Error::Ingest(format!("{}: {e}", cfg_path.display())))?;
    let ck = Checkpoint::load(&final_checkpoint(run))?;
    let manifest = DatasetManifest::load(&cfg.data)?;
    let panel_dir = out.join("panels");
    std::fs::create_dir_all(&panel_dir).map_err(|e| Error::io(&panel_dir, e))?;

    let mut panels = Vec::new();
    for video in manifest.load_split(Split::Test)? {
        let idx = panel_frame(&video, ck.model.config.clip_len());
        let recon = reconstruct_frame(&ck.model, &video, idx)?;
        let path = panel_dir.join(format!("{}_{idx:06}.png", video.frames.video_id));
        save(&panel(&video.frames.frame(idx), &recon)?, &path)?;
        panels.push(path);
    }

    let sigma_plot = match summary.final_sigma {
        Some(_) => {
            let path = out.join("sigma_trace.png");
            save(&self::sigma_plot(&read_trace(run)?), &path)?;
            Some(path)
        }
        None => None,
    };

    let mut s = String::new();
    writeln!(s, "mode: {:?} ({})", summary.mode, summary.mode.label()).unwrap();
    writeln!(s, "variant: {:?}", cfg.model.variant).unwrap();
    writeln!(s, "epochs: {}", summary.epochs).unwrap();
    writeln!(s, "steps: {}", summary.steps).unwrap();
    match summary.final_sigma {
        Some(v) => writeln!(s, "final sigma: {v:.6}").unwrap(),
        None => writeln!(s, "final sigma: n/a").unwrap(),
    }
    if let Some(l) = summary.final_loss {
        writeln!(s, "final recon loss: {:.6}", l.recon).unwrap();
        if let Some(d) = l.dist {
            writeln!(s, "final distinction loss: {d:.6}").unwrap();
        }
        writeln!(s, "final total loss: {:.6}", l.total).unwrap();
    }
    writeln!(s, "panels: {}", panels.len()).unwrap();
    let summary_path = out.join("summary.txt");
    std::fs::write(&summary_path, s).map_err(|e| Error::io(&summary_path, e))?;
    Ok(ReportOutput { panels, sigma_plot, summary: summary_path })
}
