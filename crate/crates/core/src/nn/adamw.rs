//! AdamW with decoupled weight decay and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    decay: Vec<bool>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, decay_mask: Vec<bool>) -> Self {
        let n = decay_mask.len();
        AdamW {
            config,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            decay: decay_mask,
        }
    }

    /// Applies one update with learning rate `lr`; returns the pre-clip gradient norm.
    pub fn step_with_lr(&mut self, params: &mut [T], grads: &mut [T], lr: f64) -> f64 {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let norm = grads
            .iter()
            .map(|g| {
                let g = g.to_f64().unwrap_or(f64::NAN);
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if let Some(cap) = self.config.clip_norm {
            if norm > cap && norm.is_finite() {
                let s = T::c(cap / norm);
                for g in grads.iter_mut() {
                    *g *= s;
                }
            }
        }
        self.t += 1;
        let c = &self.config;
        let b1 = T::c(c.beta1);
        let b2 = T::c(c.beta2);
        let bc1 = T::c(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(self.t as i32));
        let lr_t = T::c(lr);
        let eps = T::c(c.eps);
        let wd = T::c(lr * c.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            if self.decay[i] {
                params[i] -= wd * params[i];
            }
            params[i] -= lr_t * mh / (vh.sqrt() + eps);
        }
        norm
    }

    pub fn step(&mut self, params: &mut [T], grads: &mut [T]) -> f64 {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }
}
