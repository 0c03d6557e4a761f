//! Adaptive-moment optimizer with decoupled weight decay, plus the cosine
//! learning-rate schedule.

use crate::numeric::{ParamSet, Tensor};

/// First/second-moment adaptive step with bias correction; weight decay is
/// applied directly to the weights, decoupled from the gradient moments.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamW {
    pub fn new(set: &ParamSet, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: set.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: set.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            t: 0,
        }
    }

    /// One update over every parameter; `grads` must align with the set's
    /// insertion order.
    pub fn step(&mut self, set: &mut ParamSet, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, param) in set.iter_mut().enumerate() {
            let g = grads[idx].values();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = param.value.values_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p[i]);
            }
        }
    }
}

/// Cosine annealing to zero: `lr0 · ½(1 + cos(π·e/E))`.
pub fn cosine_lr(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())
}
