//! Training loop for the three modes: plain reconstruction, a fixed anomaly
//! weight, and a learned anomaly weight.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ResumeState};
use crate::clipio::{DatasetManifest, Split, Video};
use crate::error::{contract, Error, Result};
use crate::losses::{distinction_loss_grad, recon_loss_grad, total_loss, LossBreakdown, LossConfig};
use crate::masking::{full_frame_fallback, random_object_mask, MaskSequence};
use crate::model::{init_params, ModelConfig, ModelState};
use crate::optim::{Adam, ScalarAdam};
use crate::pseudo::{blend_noise, compose_pseudo, sample_noise, weight_sensitivity, AnomalyWeight, NoiseTensor};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Learned anomaly weight.
    Ddl,
    /// Anomaly weight fixed at 0.5.
    Sdl,
    /// Reconstruction loss only.
    None,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::None => "without DDL",
            Mode::Sdl => "with SDL",
            Mode::Ddl => "with DDL",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddl" => Ok(Mode::Ddl),
            "sdl" => Ok(Mode::Sdl),
            "none" => Ok(Mode::None),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected ddl, sdl or none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate for the anomaly-weight logit; `None` uses `learning_rate`.
    pub ell_learning_rate: Option<f64>,
    /// Seeds the data order, noise and mask streams.
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Ddl,
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-4,
            ell_learning_rate: None,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            data: PathBuf::new(),
            out: PathBuf::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        contract!(self.batch_size >= 1, "batch_size must be >= 1");
        contract!(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be > 0");
        if let Some(lr) = self.ell_learning_rate {
            contract!(lr >= 0.0 && lr.is_finite(), "ell_learning_rate must be >= 0");
        }
        Ok(())
    }

    pub fn ell_lr(&self) -> f64 {
        self.ell_learning_rate.unwrap_or(self.learning_rate)
    }

    fn initial_weight(&self) -> Option<AnomalyWeight> {
        match self.mode {
            Mode::Ddl => Some(AnomalyWeight::dynamic()),
            Mode::Sdl => Some(AnomalyWeight::fixed_half()),
            Mode::None => None,
        }
    }
}

/// A ChaCha stream that can be restored from its seed and word position.
#[derive(Clone, Debug)]
pub struct Stream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(seed: u64) -> Self {
        Stream { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn at(seed: u64, pos: u128) -> Self {
        let mut s = Stream::new(seed);
        s.rng.set_word_pos(pos);
        s
    }

    fn pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

impl PartialEq for Stream {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.pos() == other.pos()
    }
}

#[derive(Serialize, Deserialize)]
struct StreamSnapshot {
    seed: u64,
    pos: String,
}

impl From<&Stream> for StreamSnapshot {
    fn from(s: &Stream) -> Self {
        StreamSnapshot { seed: s.seed, pos: s.pos().to_string() }
    }
}

impl TryFrom<StreamSnapshot> for Stream {
    type Error = Error;
    fn try_from(s: StreamSnapshot) -> Result<Self> {
        let pos = s.pos.parse().map_err(|e| Error::Ingest(format!("stream position {:?}: {e}", s.pos)))?;
        Ok(Stream::at(s.seed, pos))
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: ModelState,
    pub weight: Option<AnomalyWeight>,
    pub adam: Adam,
    pub ell_adam: ScalarAdam,
    pub step: u64,
    pub epoch: usize,
    /// Batches already taken from the current epoch's permutation.
    pub batch_in_epoch: usize,
    /// Data-stream position before the current epoch's shuffle.
    epoch_start: u128,
    data: Stream,
    noise: Stream,
    mask: Stream,
}

// Stream seeds are derived from the run seed so the three never overlap.
const DATA_STREAM: u64 = 0x0d47_a000;
const NOISE_STREAM: u64 = 0x0b01_5e00;
const MASK_STREAM: u64 = 0x03a5_c000;

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = init_params(&cfg.model)?;
        let shapes: Vec<&[usize]> = model.params.iter().map(|p| p.value.shape()).collect();
        let adam = Adam::new(cfg.learning_rate, &shapes);
        let data = Stream::new(cfg.seed ^ DATA_STREAM);
        Ok(TrainState {
            weight: cfg.initial_weight(),
            adam,
            ell_adam: ScalarAdam::new(cfg.ell_lr()),
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            epoch_start: data.pos(),
            data,
            noise: Stream::new(cfg.seed ^ NOISE_STREAM),
            mask: Stream::new(cfg.seed ^ MASK_STREAM),
            model,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "adam_lr": self.adam.lr,
            "adam_step": self.adam.step,
            "ell_adam": self.ell_adam,
            "step": self.step,
            "epoch": self.epoch,
            "batch_in_epoch": self.batch_in_epoch,
            "epoch_start": self.epoch_start.to_string(),
            "data": StreamSnapshot::from(&self.data),
            "noise": StreamSnapshot::from(&self.noise),
            "mask": StreamSnapshot::from(&self.mask),
        });
        let mut tensors = Vec::with_capacity(2 * self.adam.m.len());
        for (p, (m, v)) in self.model.params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            tensors.push((format!("adam.m.{}", p.name), m.clone()));
            tensors.push((format!("adam.v.{}", p.name), v.clone()));
        }
        Checkpoint { model: self.model.clone(), weight: self.weight, resume: Some(ResumeState { meta, tensors }) }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let r = ck.resume.ok_or_else(|| Error::Ingest("checkpoint has no training state".into()))?;
        #[derive(Deserialize)]
        struct Meta {
            adam_lr: f64,
            adam_step: u64,
            ell_adam: ScalarAdam,
            step: u64,
            epoch: usize,
            batch_in_epoch: usize,
            epoch_start: String,
            data: StreamSnapshot,
            noise: StreamSnapshot,
            mask: StreamSnapshot,
        }
        let meta: Meta = serde_json::from_value(r.meta).map_err(|e| Error::Ingest(format!("training state: {e}")))?;
        let n = ck.model.params.len();
        if r.tensors.len() != 2 * n {
            return Err(Error::Ingest(format!("training state has {} moment tensors, expected {}", r.tensors.len(), 2 * n)));
        }
        let mut it = r.tensors.into_iter();
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            m.push(it.next().unwrap().1);
            v.push(it.next().unwrap().1);
        }
        Ok(TrainState {
            model: ck.model,
            weight: ck.weight,
            adam: Adam { lr: meta.adam_lr, step: meta.adam_step, m, v },
            ell_adam: meta.ell_adam,
            step: meta.step,
            epoch: meta.epoch,
            batch_in_epoch: meta.batch_in_epoch,
            epoch_start: meta
                .epoch_start
                .parse()
                .map_err(|e| Error::Ingest(format!("epoch_start: {e}")))?,
            data: meta.data.try_into()?,
            noise: meta.noise.try_into()?,
            mask: meta.mask.try_into()?,
        })
    }

    pub fn sigma(&self) -> Option<f64> {
        self.weight.map(|w| w.value())
    }
}

/// One training input: a normal clip plus, with a pseudo branch, its noise
/// and mask.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `(c, T, H, W)`
    pub clip: Tensor,
    pub pseudo: Option<(NoiseTensor, MaskSequence)>,
}

/// Loss, parameter gradients and the `ell` gradient for fixed samples.
pub struct StepGrads {
    pub loss: LossBreakdown,
    pub grads: Vec<Tensor>,
    pub d_ell: f64,
    caches: Vec<crate::model::ForwardCache>,
}

/// Middle frame `(c, H, W)` of a `(c, T, H, W)` clip.
fn middle(clip: &Tensor) -> Tensor {
    let (c, t, h, w) = clip.dims4();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        out.extend_from_slice(&clip.data()[(ch * t + t / 2) * h * w..][..h * w]);
    }
    Tensor::from_vec(&[c, h, w], out).expect("frame shape")
}

/// Batch-mean loss and its gradients. Both branches run in training mode.
pub fn loss_and_grads(
    model: &ModelState,
    weight: Option<AnomalyWeight>,
    samples: &[Sample],
    loss_cfg: &LossConfig,
) -> Result<StepGrads> {
    contract!(!samples.is_empty(), "empty batch");
    let b = samples.len() as f64;
    let clips: Vec<Tensor> = samples.iter().map(|s| s.clip.clone()).collect();
    let (rec, cache) = model.forward_batch(&clips, true)?;
    let cache = cache.expect("training forward keeps a cache");
    let (_, c, h, w) = rec.dims4();
    let mut d_rec = Tensor::zeros(rec.shape());
    let mut recon_sum = 0.0;
    let targets: Vec<Tensor> = clips.iter().map(middle).collect();
    for (i, target) in targets.iter().enumerate() {
        let pred = Tensor::from_vec(&[c, h, w], rec.outer(i).to_vec())?;
        let (l, g) = recon_loss_grad(target, &pred)?;
        recon_sum += l;
        d_rec.outer_mut(i).iter_mut().zip(g.data()).for_each(|(d, v)| *d = v / b);
    }
    let (mut grads, _) = model.backward(&cache, &d_rec);
    let mut caches = vec![cache];

    let weight = match weight {
        Some(w) => w,
        None => {
            let loss = total_loss(recon_sum / b, None, loss_cfg)?;
            return Ok(StepGrads { loss, grads, d_ell: 0.0, caches });
        }
    };
    let sigma = weight.value();
    let mut pseudo_clips = Vec::with_capacity(samples.len());
    for s in samples {
        let (noise, mask) = s.pseudo.as_ref().ok_or_else(|| Error::Contract("sample lacks noise and mask".into()))?;
        pseudo_clips.push(compose_pseudo(&s.clip, &blend_noise(&s.clip, noise, sigma)?, mask)?);
    }
    let (rec_a, cache_a) = model.forward_batch(&pseudo_clips, true)?;
    let cache_a = cache_a.expect("training forward keeps a cache");
    let mut d_rec_a = Tensor::zeros(rec_a.shape());
    let mut d_mid = Vec::with_capacity(samples.len());
    let (mut p_sum, mut n_sum, mut dist_sum) = (0.0, 0.0, 0.0);
    let lambda = loss_cfg.lambda;
    for (i, s) in samples.iter().enumerate() {
        let pred = Tensor::from_vec(&[c, h, w], rec_a.outer(i).to_vec())?;
        let mask = &s.pseudo.as_ref().unwrap().1;
        let t = s.clip.shape()[1];
        let g = distinction_loss_grad(&targets[i], &middle(&pseudo_clips[i]), &pred, &mask.frame(t / 2), loss_cfg.epsilon)?;
        p_sum += g.terms.p;
        n_sum += g.terms.n;
        dist_sum += g.terms.dist;
        d_rec_a.outer_mut(i).iter_mut().zip(g.d_recon.data()).for_each(|(d, v)| *d = lambda * v / b);
        d_mid.push(g.d_pseudo.map(|v| lambda * v / b));
    }
    let (grads_a, dclips) = model.backward(&cache_a, &d_rec_a);
    for (g, ga) in grads.iter_mut().zip(&grads_a) {
        g.add_assign(ga);
    }
    caches.push(cache_a);
    // Gradient w.r.t. the pseudo-anomalous clip: through the network plus the
    // direct dependence of the distinction loss on its middle frame.
    let mut dw = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mut dx = dclips[i].clone();
        let (cc, t, hh, ww) = dx.dims4();
        for ch in 0..cc {
            let dst = &mut dx.data_mut()[(ch * t + t / 2) * hh * ww..][..hh * ww];
            let src = &d_mid[i].data()[ch * hh * ww..][..hh * ww];
            dst.iter_mut().zip(src).for_each(|(d, v)| *d += v);
        }
        let (noise, mask) = s.pseudo.as_ref().unwrap();
        dw += weight_sensitivity(&s.clip, noise, mask, &dx);
    }
    let terms = crate::losses::DistinctionTerms { p: p_sum / b, n: n_sum / b, dist: dist_sum / b };
    let mut loss = total_loss(recon_sum / b, Some(terms), loss_cfg)?;
    // `total_loss` combines the batch means, which equals the mean of totals.
    loss.total = recon_sum / b + lambda * dist_sum / b;
    Ok(StepGrads { loss, grads, d_ell: dw * weight.slope(), caches })
}

/// A training window: video index and first frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub video: usize,
    pub start: usize,
}

pub fn train_windows(videos: &[Video], t: usize) -> Vec<WindowRef> {
    videos
        .iter()
        .enumerate()
        .flat_map(|(v, vid)| (0..(vid.frames.len() + 1).saturating_sub(t)).map(move |s| WindowRef { video: v, start: s }))
        .collect()
}

/// Draws masks and noise for a batch, in batch order.
fn build_samples(state: &mut TrainState, videos: &[Video], batch: &[WindowRef], t: usize) -> Result<Vec<Sample>> {
    batch
        .iter()
        .map(|w| {
            let v = &videos[w.video];
            contract!(
                v.labels.labels[w.start..w.start + t].iter().all(|&l| l == 0),
                "training window {}@{} contains frames labelled anomalous",
                v.frames.video_id,
                w.start
            );
            let clip = v.frames.slice(w.start, t);
            if state.weight.is_none() {
                return Ok(Sample { clip, pseudo: None });
            }
            let (c, _, h, ww) = clip.dims4();
            let mask = match &v.tracks {
                Some(tr) => random_object_mask(tr, w.start, t, c, &mut state.mask.rng)?,
                None => full_frame_fallback((c, t, h, ww)),
            };
            let noise = sample_noise(clip.shape(), &mut state.noise.rng);
            Ok(Sample { clip, pseudo: Some((noise, mask)) })
        })
        .collect()
}

/// One optimizer step on a batch of windows.
pub fn train_step(
    state: &mut TrainState,
    videos: &[Video],
    batch: &[WindowRef],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let t = cfg.model.clip_len();
    let samples = build_samples(state, videos, batch, t)?;
    let sg = loss_and_grads(&state.model, state.weight, &samples, &cfg.loss)?;
    if !sg.loss.total.is_finite() || !sg.d_ell.is_finite() || sg.grads.iter().any(|g| !g.is_finite()) {
        let ids: Vec<String> = batch.iter().map(|w| format!("{}@{}", videos[w.video].frames.video_id, w.start)).collect();
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient at step {} (total {}), batch windows [{}]",
            state.step + 1,
            sg.loss.total,
            ids.join(", ")
        )));
    }
    let trainable: Vec<bool> = state.model.params.iter().map(|p| p.trainable).collect();
    let mut params: Vec<&mut Tensor> = state.model.params.iter_mut().map(|p| &mut p.value).collect();
    state.adam.update(&mut params, &sg.grads, &trainable);
    for cache in &sg.caches {
        state.model.commit_running_stats(cache);
    }
    if let Some(w) = state.weight.as_mut() {
        if w.trainable {
            let d = state.ell_adam.delta(sg.d_ell);
            w.step(d);
        }
    }
    state.step += 1;
    Ok(sg.loss)
}

/// Ordered `(step, ell, sigma)` records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightTrace {
    pub records: Vec<(u64, f64, f64)>,
}

pub const TRAIN_LOG: &str = "train_log.csv";
pub const SIGMA_TRACE: &str = "sigma_trace.csv";
pub const RUN_CONFIG: &str = "run_config.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.ckpt";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch}.ckpt")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn log_row(step: u64, epoch: usize, l: &LossBreakdown, sigma: Option<f64>) -> String {
    format!("{step},{epoch},{},{},{},{},{},{}\n", l.recon, opt(l.p), opt(l.n), opt(l.dist), l.total, opt(sigma))
}

/// Keeps the header and rows whose step does not exceed `step`.
fn truncate_rows(path: &Path, header: &str, step: u64) -> Result<String> {
    let mut out = String::from(header);
    if let Ok(text) = std::fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let s: u64 = line.split(',').next().and_then(|v| v.parse().ok()).unwrap_or(u64::MAX);
            if s <= step {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Outcome of a completed run.
pub struct FitResult {
    pub state: TrainState,
    pub trace: WeightTrace,
}

const LOG_HEADER: &str = "step,epoch,recon,p,n,dist,total,sigma\n";
const TRACE_HEADER: &str = "step,ell,sigma\n";

/// Trains from scratch and writes every artifact into `cfg.out`.
pub fn fit(cfg: &TrainConfig) -> Result<FitResult> {
    fit_from(cfg, TrainState::new(cfg)?)
}

/// Continues training from `state` until `cfg.epochs` epochs are done.
pub fn fit_from(cfg: &TrainConfig, mut state: TrainState) -> Result<FitResult> {
    cfg.validate()?;
    contract!(state.model.config == cfg.model, "checkpoint model config differs from the run config");
    let manifest = DatasetManifest::load(&cfg.data)?;
    contract!(
        manifest.channels == cfg.model.in_channels,
        "dataset has {} channels, model expects {}",
        manifest.channels,
        cfg.model.in_channels
    );
    let videos = manifest.load_split(Split::Train)?;
    fit_videos(cfg, &mut state, &videos)?;
    let trace = read_trace(&cfg.out)?;
    Ok(FitResult { state, trace })
}

/// Like [`fit_from`] with the training videos already in memory.
pub fn fit_videos(cfg: &TrainConfig, state: &mut TrainState, videos: &[Video]) -> Result<()> {
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(RUN_CONFIG), &(serde_json::to_string_pretty(cfg).expect("serializable config") + "\n"))?;
    let t = cfg.model.clip_len();
    let windows = train_windows(videos, t);
    contract!(!windows.is_empty(), "training split has no windows of {t} frames");

    let mut log = truncate_rows(&out.join(TRAIN_LOG), LOG_HEADER, state.step)?;
    let trace_path = out.join(SIGMA_TRACE);
    let mut trace = String::new();
    if let Some(w) = state.weight {
        trace = truncate_rows(&trace_path, TRACE_HEADER, state.step)?;
        if state.step == 0 {
            trace.truncate(TRACE_HEADER.len());
            writeln!(trace, "0,{},{}", w.ell, w.value()).unwrap();
        }
    } else if trace_path.exists() {
        std::fs::remove_file(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    }
    let flush = |log: &str, trace: &str| -> Result<()> {
        write(&out.join(TRAIN_LOG), log)?;
        if !trace.is_empty() {
            write(&trace_path, trace)?;
        }
        Ok(())
    };
    if state.step == 0 {
        state.to_checkpoint().save(&out.join(epoch_checkpoint_name(0)))?;
    }

    while state.epoch < cfg.epochs {
        // Regenerate this epoch's order from the stream position at its start.
        state.data.rng.set_word_pos(state.epoch_start);
        let mut order = windows.clone();
        order.shuffle(&mut state.data.rng);
        let after_shuffle = state.data.pos();
        let batches: Vec<&[WindowRef]> = order.chunks(cfg.batch_size).collect();
        while state.batch_in_epoch < batches.len() {
            let batch = batches[state.batch_in_epoch];
            let loss = train_step(state, videos, batch, cfg)?;
            state.batch_in_epoch += 1;
            log.push_str(&log_row(state.step, state.epoch + 1, &loss, state.sigma()));
            if let Some(w) = state.weight {
                writeln!(trace, "{},{},{}", state.step, w.ell, w.value()).unwrap();
            }
        }
        state.epoch += 1;
        state.batch_in_epoch = 0;
        state.epoch_start = after_shuffle;
        state.data.rng.set_word_pos(after_shuffle);
        flush(&log, &trace)?;
        state.to_checkpoint().save(&out.join(epoch_checkpoint_name(state.epoch)))?;
    }
    flush(&log, &trace)?;
    state.to_checkpoint().save(&out.join(FINAL_CHECKPOINT))?;
    Ok(())
}

pub fn read_trace(dir: &Path) -> Result<WeightTrace> {
    let path = dir.join(SIGMA_TRACE);
    if !path.exists() {
        return Ok(WeightTrace::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut trace = WeightTrace::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Ingest(format!("{}:{}: malformed row", path.display(), i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let step = cols[0].parse().map_err(|_| bad())?;
        let ell = cols[1].parse().map_err(|_| bad())?;
        let sigma = cols[2].parse().map_err(|_| bad())?;
        trace.records.push((step, ell, sigma));
    }
    Ok(trace)
}

/// Summary of a finished run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub epochs: usize,
    pub steps: u64,
    pub final_sigma: Option<f64>,
    pub final_loss: Option<LossBreakdown>,
}

pub fn describe_run(dir: &Path) -> Result<RunSummary> {
    let cfg_path = dir.join(RUN_CONFIG);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| Error::Ingest(format!("{}: {e}", cfg_path.display())))?;
    let log_path = dir.join(TRAIN_LOG);
    let log = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let last = log.lines().skip(1).last();
    let final_loss = last.map(parse_log_row).transpose().map_err(|e| Error::Ingest(format!("{}: {e}", log_path.display())))?;
    let steps = last.and_then(|l| l.split(',').next()?.parse().ok()).unwrap_or(0);
    let final_sigma = if cfg.mode == Mode::None {
        None
    } else {
        if !dir.join(SIGMA_TRACE).exists() {
            return Err(Error::Ingest(format!("{} is missing for a {:?} run", SIGMA_TRACE, cfg.mode)));
        }
        let trace = read_trace(dir)?;
        Some(trace.records.last().ok_or_else(|| Error::Ingest(format!("{SIGMA_TRACE} is empty")))?.2)
    };
    Ok(RunSummary { mode: cfg.mode, epochs: cfg.epochs, steps, final_sigma, final_loss })
}

fn parse_log_row(line: &str) -> std::result::Result<LossBreakdown, String> {
    let c: Vec<&str> = line.split(',').collect();
    if c.len() != 8 {
        return Err(format!("expected 8 columns in {line:?}"));
    }
    let f = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let o = |s: &str| if s.is_empty() { Ok(None) } else { f(s).map(Some) };
    Ok(LossBreakdown { recon: f(c[2])?, p: o(c[3])?, n: o(c[4])?, dist: o(c[5])?, total: f(c[6])? })
}

/// Final checkpoint path of a run directory.
pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join(FINAL_CHECKPOINT)
}
