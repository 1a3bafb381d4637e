//! Pseudo-anomaly creation: uniform noise, the trainable anomaly weight, and
//! the two-step blend-then-overlay composition.
//!
//! With weight `w = sigmoid(ell)`, noise `A` and binary mask `M`:
//!
//! ```text
//! noisy  = (1 - w) * X + w * A
//! X_A    = (1 - M) * X + M * noisy      = X + M * w * (A - X)
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::masking::MaskSequence;
use crate::tensor::Tensor;

/// `1 / (1 + exp(-ell))`.
pub fn sigmoid_weight(ell: f64) -> Result<f64> {
    contract!(ell.is_finite(), "anomaly weight logit must be finite, got {ell}");
    Ok(sigmoid(ell))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The trainable scalar `ell` whose sigmoid is the anomaly weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyWeight {
    pub ell: f64,
    pub trainable: bool,
}

impl AnomalyWeight {
    /// Learned weight starting at `sigmoid(0) = 0.5`.
    pub fn dynamic() -> Self {
        AnomalyWeight { ell: 0.0, trainable: true }
    }

    /// Weight pinned at 0.5.
    pub fn fixed_half() -> Self {
        AnomalyWeight { ell: 0.0, trainable: false }
    }

    pub fn value(&self) -> f64 {
        sigmoid(self.ell)
    }

    /// `d sigmoid(ell) / d ell`.
    pub fn slope(&self) -> f64 {
        let s = self.value();
        s * (1.0 - s)
    }

    /// Applies a step to `ell` unless frozen.
    pub fn step(&mut self, delta: f64) {
        if self.trainable {
            self.ell += delta;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTensor {
    pub data: Tensor,
    /// Word position of the generator when the draw started; replaying a
    /// generator from this position reproduces the tensor.
    pub origin: u128,
}

/// I.i.d. `Uniform[0, 1)` noise of the given shape.
pub fn sample_noise(shape: &[usize], rng: &mut ChaCha8Rng) -> NoiseTensor {
    let origin = rng.get_word_pos();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random::<f64>()).collect();
    NoiseTensor { data: Tensor::from_vec(shape, data).expect("noise shape"), origin }
}

/// `(1 - w) * x + w * a`.
pub fn blend_noise(x: &Tensor, a: &NoiseTensor, w: f64) -> Result<Tensor> {
    contract!((0.0..=1.0).contains(&w), "blend weight must lie in [0, 1], got {w}");
    x.zip_map(&a.data, |xv, av| (1.0 - w) * xv + w * av)
}

/// `(1 - m) * x + m * noisy`, i.e. `noisy` inside the mask and `x` outside.
pub fn compose_pseudo(x: &Tensor, noisy: &Tensor, mask: &MaskSequence) -> Result<Tensor> {
    x.check_same_shape(noisy)?;
    x.check_same_shape(&mask.mask)?;
    mask.check_binary()?;
    let data = x
        .data()
        .iter()
        .zip(noisy.data())
        .zip(mask.mask.data())
        .map(|((&xv, &nv), &m)| (1.0 - m) * xv + m * nv)
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// `d<grad, X_A> / dw` for a fixed clip, noise and mask: `sum(grad * M * (A - X))`.
pub fn weight_sensitivity(x: &Tensor, a: &NoiseTensor, mask: &MaskSequence, grad: &Tensor) -> f64 {
    x.data()
        .iter()
        .zip(a.data.data())
        .zip(mask.mask.data())
        .zip(grad.data())
        .map(|(((&xv, &av), &m), &g)| g * m * (av - xv))
        .sum()
}
