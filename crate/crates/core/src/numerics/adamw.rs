use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamSet, BLOCK_NAMES};
use crate::{Error, Result};

/// AdamW with global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64, clip_norm: f64) -> Self {
        let m: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            step: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            v: m.clone(),
            m,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    /// Clip, apply one decoupled-weight-decay Adam update, then zero the
    /// gradients. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<f64> {
        for (name, g) in BLOCK_NAMES.iter().zip(params.grads.blocks()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient block {name}")));
            }
        }
        let norm = params.grads.global_norm();
        let scale = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);

        let grads: Vec<Vec<f64>> = params.grads.blocks().iter().map(|b| b.to_vec()).collect();
        for (bi, theta) in params.blocks_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[bi], &mut self.v[bi]);
            for (i, w) in theta.iter_mut().enumerate() {
                let g = grads[bi][i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * (m_hat / (libm::sqrt(v_hat) + self.eps) + self.weight_decay * *w);
            }
        }
        params.grads.zero();
        Ok(norm)
    }
}
