//! Conv3DSkipUNet reconstruction network and its single-frame UNet baseline.
//!
//! Frames of a clip are encoded independently by 2-D conv blocks (time is
//! folded into the batch axis). Every skip connection passes through a 3-D
//! convolution whose temporal extent equals the clip length, which collapses
//! the time axis so the decoder only ever sees middle-frame-aligned features.
//!
//! Layout for depth `D` (channel widths double per encoder stage):
//!
//! ```text
//! e0 = input frames                      (B*T, c,      H,     W)
//! e_l = EncoderBlock_l(e_{l-1})          (B*T, base*2^(l-1), H/2^l, W/2^l)
//! s_l = Fuse_l(e_l)                      (B,   ch(e_l), ...)         l = 0..=D
//! d   = s_D
//! d   = DecoderBlock(d, s_l)             l = D-1 down to 0
//! out = Head(d)                          (B,   c,      H,     W)
//! ```
//!
//! The 3-D fusion is computed as a 2-D convolution over `(B, T*C, H, W)`,
//! which is the same memory as `(B*T, C, H, W)` with frames of a clip stored
//! contiguously; its weight is `(C, T, C, 3, 3)` flattened to `(C, T*C, 3, 3)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::nn::{self, BnCache};
use crate::tensor::Tensor;

pub const MODEL_VERSION: &str = "c3dsu/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Conv3DSkipUNet: temporal 3-D convolutions on every skip path.
    C3dsu,
    /// Plain per-frame UNet, identity skips, single-frame input.
    UnetBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_channels: usize,
    /// Frames per input clip (odd). Ignored by the baseline, which sees one frame.
    pub frames: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::C3dsu,
            in_channels: 1,
            frames: 3,
            base_channels: 32,
            depth: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Number of frames the network actually consumes per clip.
    pub fn clip_len(&self) -> usize {
        match self.variant {
            Variant::C3dsu => self.frames,
            Variant::UnetBaseline => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.depth >= 1, "depth must be >= 1");
        contract!(self.in_channels >= 1, "in_channels must be >= 1");
        contract!(
            self.base_channels >= 4 && self.base_channels.is_multiple_of(4),
            "base_channels must be a positive multiple of 4 (four parallel heads), got {}",
            self.base_channels
        );
        contract!(
            self.frames >= 1 && self.frames % 2 == 1,
            "clip length must be odd, got {}",
            self.frames
        );
        Ok(())
    }

    /// Channel width of encoder level `l` (level 0 is the input).
    fn level_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.in_channels
        } else {
            self.base_channels << (l - 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
struct ConvBlock {
    heads: [Conv; 4],
    bn1: Bn,
    conv: Conv,
    bn2: Bn,
    /// Encoder blocks halve H and W after the heads; decoder blocks double
    /// them before.
    encoder: bool,
}

#[derive(Clone, Debug)]
struct Layout {
    enc: Vec<ConvBlock>,
    fuse: Vec<Option<Conv>>,
    dec: Vec<ConvBlock>,
    head: Conv,
}

struct Builder {
    params: Vec<Param>,
    /// `None` when only the layout is wanted.
    rng: Option<ChaCha8Rng>,
}

impl Builder {
    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> usize {
        self.params.push(Param { name, value, trainable });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let fan_in = (cin * 9) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let data = match self.rng.as_mut() {
            Some(rng) => (0..cout * cin * 9).map(|_| normal.sample(rng)).collect(),
            None => vec![0.0; cout * cin * 9],
        };
        let w = self.push(
            format!("{name}.weight"),
            Tensor::from_vec(&[cout, cin, 3, 3], data).expect("conv shape"),
            true,
        );
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[cout]), true);
        Conv { w, b }
    }

    fn bn(&mut self, name: &str, ch: usize) -> Bn {
        Bn {
            gamma: self.push(format!("{name}.gamma"), Tensor::full(&[ch], 1.0), true),
            beta: self.push(format!("{name}.beta"), Tensor::zeros(&[ch]), true),
            mean: self.push(format!("{name}.running_mean"), Tensor::zeros(&[ch]), false),
            var: self.push(format!("{name}.running_var"), Tensor::full(&[ch], 1.0), false),
        }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, encoder: bool) -> ConvBlock {
        let heads = std::array::from_fn(|i| self.conv(&format!("{name}.head{i}"), cin, cout / 4));
        let bn1 = self.bn(&format!("{name}.bn1"), cout);
        let conv_in = if encoder { 4 * cout } else { cout };
        let conv = self.conv(&format!("{name}.conv"), conv_in, cout);
        let bn2 = self.bn(&format!("{name}.bn2"), cout);
        ConvBlock { heads, bn1, conv, bn2, encoder }
    }
}

fn build(config: &ModelConfig, init: bool) -> (Layout, Vec<Param>) {
    let rng = init.then(|| ChaCha8Rng::seed_from_u64(config.seed));
    let mut b = Builder { params: Vec::new(), rng };
    let depth = config.depth;
    let enc = (1..=depth)
        .map(|l| b.block(&format!("enc{l}"), config.level_channels(l - 1), config.level_channels(l), true))
        .collect();
    let t = config.clip_len();
    let fuse = (0..=depth)
        .map(|l| match config.variant {
            Variant::C3dsu => {
                let ch = config.level_channels(l);
                Some(b.conv(&format!("fuse{l}"), t * ch, ch))
            }
            Variant::UnetBaseline => None,
        })
        .collect();
    let mut dec = Vec::with_capacity(depth);
    let mut up_ch = config.level_channels(depth);
    for level in (0..depth).rev() {
        let out = if level == 0 { config.base_channels } else { config.level_channels(level) };
        let cin = up_ch / 4 + config.level_channels(level);
        dec.push(b.block(&format!("dec{level}"), cin, out, false));
        up_ch = out;
    }
    let head = b.conv("head", config.base_channels, config.in_channels);
    (Layout { enc, fuse, dec, head }, b.params)
}

/// Parameters plus configuration of the reconstruction function.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub version: String,
}

struct BlockCache {
    input: Tensor,
    bn1: BnCache,
    act1: Tensor,
    conv_in: Tensor,
    bn2: BnCache,
    out: Tensor,
}

/// Activations retained by a training-mode forward pass.
pub struct ForwardCache {
    batch: usize,
    enc_out: Vec<Tensor>,
    enc: Vec<BlockCache>,
    fused: Vec<Tensor>,
    dec: Vec<BlockCache>,
    head_in: Tensor,
}

/// Initializes parameters deterministically from `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelState> {
    config.validate()?;
    let (_, params) = build(config, true);
    Ok(ModelState { config: config.clone(), params, version: MODEL_VERSION.to_string() })
}

impl ModelState {
    fn layout(&self) -> Layout {
        build(&self.config, false).0
    }

    fn p(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn check_clip(&self, clip: &Tensor) -> Result<()> {
        contract!(clip.ndim() == 4, "clip must be (c, T, H, W), got {:?}", clip.shape());
        let (c, t, h, w) = clip.dims4();
        let div = 1usize << self.config.depth;
        contract!(c == self.config.in_channels, "expected {} channels, got {c}", self.config.in_channels);
        contract!(
            t == self.config.clip_len(),
            "expected clip of {} frames, got {t}",
            self.config.clip_len()
        );
        contract!(
            h > 0 && w > 0 && h % div == 0 && w % div == 0,
            "spatial size {h}x{w} must be divisible by {div}"
        );
        contract!(clip.is_finite(), "clip contains non-finite values");
        Ok(())
    }

    /// Evaluation-mode reconstruction of the middle frame of one clip:
    /// `(c, T, H, W) -> (c, 1, H, W)`.
    pub fn forward(&self, clip: &Tensor) -> Result<Tensor> {
        let (out, _) = self.forward_batch(std::slice::from_ref(clip), false)?;
        let (_, c, h, w) = out.dims4();
        out.reshape(&[c, 1, h, w])
    }

    /// Forward over a batch of clips. Returns `(B, c, H, W)` and, in training
    /// mode, the cache needed by [`ModelState::backward`].
    pub fn forward_batch(&self, clips: &[Tensor], train: bool) -> Result<(Tensor, Option<ForwardCache>)> {
        contract!(!clips.is_empty(), "empty batch");
        for clip in clips {
            self.check_clip(clip)?;
        }
        let frames: Vec<Tensor> = clips.iter().map(Tensor::swap01).collect();
        let refs: Vec<&Tensor> = frames.iter().collect();
        let (b, t) = (clips.len(), self.config.clip_len());
        let (_, c, h, w) = frames[0].dims4();
        let x = Tensor::stack(&refs)?.reshape(&[b * t, c, h, w])?;
        Ok(self.run(x, b, train))
    }

    fn run(&self, x: Tensor, batch: usize, train: bool) -> (Tensor, Option<ForwardCache>) {
        let layout = self.layout();
        let mut enc_out = vec![x];
        let mut enc_caches = Vec::new();
        for blk in &layout.enc {
            let (y, cache) = self.block_forward(blk, enc_out.last().expect("input"), train);
            enc_caches.extend(cache);
            enc_out.push(y);
        }
        let fused: Vec<Tensor> = layout
            .fuse
            .iter()
            .zip(&enc_out)
            .map(|(f, e)| self.fuse_forward(*f, e, batch))
            .collect();
        let depth = self.config.depth;
        let mut d = fused[depth].clone();
        let mut dec_caches = Vec::new();
        for (j, blk) in layout.dec.iter().enumerate() {
            let skip = &fused[depth - 1 - j];
            let input = nn::concat_channels(&[&nn::depth_to_space(&d), skip]);
            let (y, cache) = self.block_forward(blk, &input, train);
            dec_caches.extend(cache);
            d = y;
        }
        let out = nn::conv3x3_forward(&d, self.p(layout.head.w), self.p(layout.head.b));
        let cache = train.then_some(ForwardCache {
            batch,
            enc_out,
            enc: enc_caches,
            fused,
            dec: dec_caches,
            head_in: d,
        });
        (out, cache)
    }

    fn fuse_forward(&self, conv: Option<Conv>, e: &Tensor, batch: usize) -> Tensor {
        match conv {
            None => e.clone(),
            Some(cv) => {
                let (bt, c, h, w) = e.dims4();
                let folded = e.clone().reshape(&[batch, (bt / batch) * c, h, w]).expect("fold time");
                nn::conv3x3_forward(&folded, self.p(cv.w), self.p(cv.b))
            }
        }
    }

    fn heads_forward(&self, heads: &[Conv; 4], x: &Tensor) -> Tensor {
        let outs: Vec<Tensor> = heads
            .iter()
            .map(|h| nn::conv3x3_forward(x, self.p(h.w), self.p(h.b)))
            .collect();
        let refs: Vec<&Tensor> = outs.iter().collect();
        nn::concat_channels(&refs)
    }

    fn bn_forward(&self, bn: Bn, x: &Tensor, train: bool) -> (Tensor, Option<BnCache>) {
        if train {
            let (y, cache) = nn::batchnorm_train(x, self.p(bn.gamma), self.p(bn.beta));
            (y, Some(cache))
        } else {
            let y = nn::batchnorm_eval(x, self.p(bn.gamma), self.p(bn.beta), self.p(bn.mean), self.p(bn.var));
            (y, None)
        }
    }

    fn block_forward(&self, blk: &ConvBlock, x: &Tensor, train: bool) -> (Tensor, Option<BlockCache>) {
        let z = self.heads_forward(&blk.heads, x);
        let (z, bn1) = self.bn_forward(blk.bn1, &z, train);
        let act1 = nn::relu(&z);
        let conv_in = if blk.encoder { nn::space_to_depth(&act1) } else { act1.clone() };
        let z = nn::conv3x3_forward(&conv_in, self.p(blk.conv.w), self.p(blk.conv.b));
        let (z, bn2) = self.bn_forward(blk.bn2, &z, train);
        let out = nn::relu(&z);
        let cache = match (bn1, bn2) {
            (Some(bn1), Some(bn2)) => Some(BlockCache {
                input: x.clone(),
                bn1,
                act1,
                conv_in,
                bn2,
                out: out.clone(),
            }),
            _ => None,
        };
        (out, cache)
    }

    /// Back-propagates `dout` (`(B, c, H, W)`) through a training-mode pass.
    ///
    /// Returns gradients aligned with `self.params` (zeros for running
    /// statistics) and the gradient w.r.t. the input clips, `(B, c, T, H, W)`
    /// flattened into one tensor per clip.
    pub fn backward(&self, cache: &ForwardCache, dout: &Tensor) -> (Vec<Tensor>, Vec<Tensor>) {
        let layout = self.layout();
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let depth = self.config.depth;

        let g = nn::conv3x3_backward(&cache.head_in, self.p(layout.head.w), dout, true);
        acc(&mut grads, layout.head, g.dweight, g.dbias);
        let mut dd = g.dx.expect("dx");

        let mut dfused: Vec<Option<Tensor>> = vec![None; depth + 1];
        for (j, blk) in layout.dec.iter().enumerate().rev() {
            let level = depth - 1 - j;
            let din = self.block_backward(blk, &cache.dec[j], &dd, &mut grads);
            let up_ch = din.shape()[1] - cache.fused[level].shape()[1];
            let mut parts = nn::split_channels(&din, &[up_ch, cache.fused[level].shape()[1]]);
            dfused[level] = parts.pop();
            dd = nn::space_to_depth(&parts.pop().expect("up part"));
        }
        dfused[depth] = Some(dd);

        let mut denc: Vec<Tensor> = Vec::with_capacity(depth + 1);
        for (level, df) in dfused.into_iter().enumerate() {
            let df = df.expect("every level receives a gradient");
            let e = &cache.enc_out[level];
            let de = match layout.fuse[level] {
                None => df,
                Some(cv) => {
                    let (bt, c, h, w) = e.dims4();
                    let folded = e.clone().reshape(&[cache.batch, (bt / cache.batch) * c, h, w]).expect("fold");
                    let g = nn::conv3x3_backward(&folded, self.p(cv.w), &df, true);
                    acc(&mut grads, cv, g.dweight, g.dbias);
                    g.dx.expect("dx").reshape(&[bt, c, h, w]).expect("unfold")
                }
            };
            denc.push(de);
        }
        for l in (1..=depth).rev() {
            let d_in = self.block_backward(&layout.enc[l - 1], &cache.enc[l - 1], &denc[l], &mut grads);
            denc[l - 1].add_assign(&d_in);
        }

        let dx = denc.swap_remove(0);
        let (bt, c, h, w) = dx.dims4();
        let t = bt / cache.batch;
        let dclips = (0..cache.batch)
            .map(|b| {
                let frames = Tensor::from_vec(&[t, c, h, w], dx.data()[b * t * c * h * w..(b + 1) * t * c * h * w].to_vec())
                    .expect("clip grad");
                frames.swap01()
            })
            .collect();
        (grads, dclips)
    }

    fn block_backward(&self, blk: &ConvBlock, cache: &BlockCache, dy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let dz = nn::relu_backward(&cache.out, dy);
        let (dz, dgamma, dbeta) = nn::batchnorm_backward(&cache.bn2, self.p(blk.bn2.gamma), &dz);
        grads[blk.bn2.gamma].add_assign(&dgamma);
        grads[blk.bn2.beta].add_assign(&dbeta);
        let g = nn::conv3x3_backward(&cache.conv_in, self.p(blk.conv.w), &dz, true);
        acc(grads, blk.conv, g.dweight, g.dbias);
        let mut da = g.dx.expect("dx");
        if blk.encoder {
            da = nn::depth_to_space(&da);
        }
        let dz = nn::relu_backward(&cache.act1, &da);
        let (dz, dgamma, dbeta) = nn::batchnorm_backward(&cache.bn1, self.p(blk.bn1.gamma), &dz);
        grads[blk.bn1.gamma].add_assign(&dgamma);
        grads[blk.bn1.beta].add_assign(&dbeta);
        let per_head = dz.shape()[1] / 4;
        let parts = nn::split_channels(&dz, &[per_head; 4]);
        let mut dx = Tensor::zeros(cache.input.shape());
        for (h, dpart) in blk.heads.iter().zip(&parts) {
            let g = nn::conv3x3_backward(&cache.input, self.p(h.w), dpart, true);
            acc(grads, *h, g.dweight, g.dbias);
            dx.add_assign(&g.dx.expect("dx"));
        }
        dx
    }

    /// Folds the batch statistics of a training pass into the running
    /// estimates used at evaluation time.
    pub fn commit_running_stats(&mut self, cache: &ForwardCache) {
        let layout = self.layout();
        let blocks = layout.enc.iter().zip(&cache.enc).chain(layout.dec.iter().zip(&cache.dec));
        let mut updates = Vec::new();
        for (blk, bc) in blocks {
            updates.push((blk.bn1, &bc.bn1));
            updates.push((blk.bn2, &bc.bn2));
        }
        for (bn, bc) in updates {
            let m = nn::BN_MOMENTUM;
            for (r, &v) in self.params[bn.mean].value.data_mut().iter_mut().zip(&bc.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, &v) in self.params[bn.var].value.data_mut().iter_mut().zip(&bc.var_unbiased) {
                *r = (1.0 - m) * *r + m * v;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Checks that parameter names and shapes match what `config` implies.
    pub(crate) fn verify_layout(&self) -> Result<()> {
        let (_, expected) = build(&self.config, false);
        if expected.len() != self.params.len() {
            return Err(Error::Ingest(format!(
                "checkpoint has {} tensors, config implies {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (e, p) in expected.iter().zip(&self.params) {
            if e.name != p.name || e.value.shape() != p.value.shape() {
                return Err(Error::Ingest(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Tensor], conv: Conv, dw: Tensor, db: Tensor) {
    grads[conv.w].add_assign(&dw);
    grads[conv.b].add_assign(&db);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig { variant, in_channels: 1, frames: 3, base_channels: 4, depth: 2, seed: 3 }
    }

    fn random_clip(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn default_config_reconstructs_middle_frame_shape() {
        let cfg = ModelConfig { base_channels: 8, ..ModelConfig::default() };
        let state = init_params(&cfg).unwrap();
        let out = state.forward(&random_clip(&[1, 3, 64, 64], 1)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 64, 64]);
    }

    #[test]
    fn baseline_takes_single_frames() {
        let cfg = ModelConfig { variant: Variant::UnetBaseline, base_channels: 8, ..ModelConfig::default() };
        let state = init_params(&cfg).unwrap();
        assert!(state.params.iter().all(|p| !p.name.starts_with("fuse")));
        let out = state.forward(&random_clip(&[1, 1, 64, 64], 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 64, 64]);
        assert!(state.forward(&random_clip(&[1, 3, 64, 64], 2)).is_err());
    }

    #[test]
    fn encoder_channel_schedule_doubles() {
        let state = init_params(&ModelConfig::default()).unwrap();
        let w = |n: &str| state.param(n).unwrap().shape().to_vec();
        // 32 -> 64 stage: four heads of 16, then 4*64 -> 64 after space-to-depth.
        assert_eq!(w("enc2.head0.weight"), vec![16, 32, 3, 3]);
        assert_eq!(w("enc2.conv.weight"), vec![64, 256, 3, 3]);
        assert_eq!(w("enc4.conv.weight"), vec![256, 1024, 3, 3]);
        // Temporal fusion of 3 frames at the 64-channel level.
        assert_eq!(w("fuse2.weight"), vec![64, 192, 3, 3]);
        // Decoder from the 4x4 bottleneck: 256/4 upsampled + 128 skip -> 128.
        assert_eq!(w("dec3.head0.weight"), vec![32, 192, 3, 3]);
        assert_eq!(w("head.weight"), vec![1, 32, 3, 3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let state = init_params(&tiny(Variant::C3dsu)).unwrap();
        assert!(state.forward(&random_clip(&[1, 3, 10, 16], 0)).is_err());
        let mut bad = random_clip(&[1, 3, 16, 16], 0);
        bad.data_mut()[5] = f64::NAN;
        assert!(matches!(state.forward(&bad), Err(Error::Contract(_))));
        assert!(init_params(&ModelConfig { frames: 2, ..tiny(Variant::C3dsu) }).is_err());
        assert!(init_params(&ModelConfig { base_channels: 6, ..tiny(Variant::C3dsu) }).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic_and_batch_independent() {
        let state = init_params(&tiny(Variant::C3dsu)).unwrap();
        let a = random_clip(&[1, 3, 16, 16], 4);
        let b = random_clip(&[1, 3, 16, 16], 5);
        let single = state.forward(&a).unwrap();
        assert_eq!(single, state.forward(&a).unwrap());
        let (batch, _) = state.forward_batch(&[b, a], false).unwrap();
        assert_eq!(batch.outer(1), single.data());
    }

    #[test]
    fn seeds_control_initialization() {
        let a = init_params(&tiny(Variant::C3dsu)).unwrap();
        let b = init_params(&tiny(Variant::C3dsu)).unwrap();
        let c = init_params(&ModelConfig { seed: 4, ..tiny(Variant::C3dsu) }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    #[test]
    fn single_frame_c3dsu_matches_baseline_shape_contract() {
        let cfg = ModelConfig { frames: 1, ..tiny(Variant::C3dsu) };
        let state = init_params(&cfg).unwrap();
        assert_eq!(state.param("fuse1.weight").unwrap().shape(), &[4, 4, 3, 3]);
        let out = state.forward(&random_clip(&[1, 1, 16, 16], 6)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 16, 16]);
    }

    #[test]
    fn running_stats_move_after_commit() {
        let mut state = init_params(&tiny(Variant::C3dsu)).unwrap();
        let clip = random_clip(&[1, 3, 16, 16], 7);
        let (_, cache) = state.forward_batch(&[clip], true).unwrap();
        let before = state.param("enc1.bn1.running_mean").unwrap().clone();
        state.commit_running_stats(&cache.unwrap());
        assert_ne!(&before, state.param("enc1.bn1.running_mean").unwrap());
    }
}
