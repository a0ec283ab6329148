//! Two-layer GELU projection head with a hand-written backward pass.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tensor::Tensor2D;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Closed-form derivative of the exact GELU: `Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI);
    cdf + x * pdf
}

/// `GELU(X·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub w1: Tensor2D,
    pub b1: Vec<f64>,
    pub w2: Tensor2D,
    pub b2: Vec<f64>,
}

/// Activations saved by [`MlpHead::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Tensor2D,
    pre: Tensor2D,
    act: Tensor2D,
}

impl MlpHead {
    pub fn zeros(d: usize, h: usize, d_proj: usize) -> Self {
        Self {
            w1: Tensor2D::zeros(d, h),
            b1: vec![0.0; h],
            w2: Tensor2D::zeros(h, d_proj),
            b2: vec![0.0; d_proj],
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]` for weights and biases alike.
    pub fn init(d: usize, h: usize, d_proj: usize, rng: &mut SeededRng) -> Self {
        let mut head = Self::zeros(d, h, d_proj);
        let a1 = 1.0 / libm::sqrt(d as f64);
        let a2 = 1.0 / libm::sqrt(h as f64);
        head.w1.data_mut().iter_mut().for_each(|v| *v = rng.range(-a1, a1));
        head.b1.iter_mut().for_each(|v| *v = rng.range(-a1, a1));
        head.w2.data_mut().iter_mut().for_each(|v| *v = rng.range(-a2, a2));
        head.b2.iter_mut().for_each(|v| *v = rng.range(-a2, a2));
        head
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                op: "mlp_forward",
                expected: (x.rows(), self.input_dim()),
                found: x.shape(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2D) -> Result<(Tensor2D, MlpCache)> {
        self.check_input(x)?;
        let mut pre = x.matmul(&self.w1)?;
        pre.add_row_vector(&self.b1)?;
        let act = pre.map(gelu);
        let mut out = act.matmul(&self.w2)?;
        out.add_row_vector(&self.b2)?;
        let cache = MlpCache {
            input: x.clone(),
            pre,
            act,
        };
        Ok((out, cache))
    }

    /// Forward without keeping activations.
    pub fn apply(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_input(x)?;
        let mut pre = x.matmul(&self.w1)?;
        pre.add_row_vector(&self.b1)?;
        let act = pre.map(gelu);
        let mut out = act.matmul(&self.w2)?;
        out.add_row_vector(&self.b2)?;
        Ok(out)
    }

    /// Accumulate parameter gradients for upstream gradient `d_out` into `grads`.
    /// The input is a frozen hidden state, so no input gradient is produced.
    pub fn backward(&self, cache: &MlpCache, d_out: &Tensor2D, grads: &mut MlpHead) -> Result<()> {
        if d_out.shape() != (cache.act.rows(), self.output_dim()) {
            return Err(Error::Dimension {
                op: "mlp_backward",
                expected: (cache.act.rows(), self.output_dim()),
                found: d_out.shape(),
            });
        }
        let d_w2 = cache.act.matmul_tn(d_out)?;
        let d_b2 = d_out.column_sums();
        let mut d_pre = d_out.matmul_nt(&self.w2)?;
        for (g, &a) in d_pre.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= gelu_grad(a);
        }
        let d_w1 = cache.input.matmul_tn(&d_pre)?;
        let d_b1 = d_pre.column_sums();

        add_into(grads.w1.data_mut(), d_w1.data());
        add_into(&mut grads.b1, &d_b1);
        add_into(grads.w2.data_mut(), d_w2.data());
        add_into(&mut grads.b2, &d_b2);
        Ok(())
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.data_mut(), &mut self.b1, self.w2.data_mut(), &mut self.b2]
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
