//! Adam for the network parameters and the scalar anomaly-weight logit.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[&[usize]]) -> Self {
        Adam {
            lr,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update; entries with `trainable[i] == false` are left untouched.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], trainable: &[bool]) {
        self.step += 1;
        let (c1, c2) = bias_corrections(self.step);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            let p = params[i].data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            }
        }
    }
}

fn bias_corrections(step: u64) -> (f64, f64) {
    (1.0 - BETA1.powi(step as i32), 1.0 - BETA2.powi(step as i32))
}

/// Adam state for a single scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub lr: f64,
    pub step: u64,
    pub m: f64,
    pub v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        ScalarAdam { lr, ..Default::default() }
    }

    /// Returns the increment to add to the scalar.
    pub fn delta(&mut self, g: f64) -> f64 {
        self.step += 1;
        let (c1, c2) = bias_corrections(self.step);
        self.m = BETA1 * self.m + (1.0 - BETA1) * g;
        self.v = BETA2 * self.v + (1.0 - BETA2) * g * g;
        -self.lr * (self.m / c1) / ((self.v / c2).sqrt() + EPS)
    }
}
