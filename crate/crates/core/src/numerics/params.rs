use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::mlp::MlpHead;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Head widths. The default keeps hidden and projection width equal to the
/// input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    pub d: usize,
    pub h: usize,
    pub d_proj: usize,
}

impl HeadDims {
    pub fn square(d: usize) -> Self {
        Self { d, h: d, d_proj: d }
    }
}

pub const TAU_INIT: f64 = 0.05;

pub const BLOCK_NAMES: [&str; 9] = [
    "img_head.W1",
    "img_head.b1",
    "img_head.W2",
    "img_head.b2",
    "lang_head.W1",
    "lang_head.b1",
    "lang_head.W2",
    "lang_head.b2",
    "tau",
];

/// Gradient buffers mirroring [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub img_head: MlpHead,
    pub lang_head: MlpHead,
    pub tau: f64,
}

impl ParamGrads {
    pub fn zeros(dims: HeadDims) -> Self {
        Self {
            img_head: MlpHead::zeros(dims.d, dims.h, dims.d_proj),
            lang_head: MlpHead::zeros(dims.d, dims.h, dims.d_proj),
            tau: 0.0,
        }
    }

    pub fn blocks(&self) -> [&[f64]; 9] {
        let [a, b, c, d] = self.img_head.blocks();
        let [e, f, g, h] = self.lang_head.blocks();
        [a, b, c, d, e, f, g, h, core::slice::from_ref(&self.tau)]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        let [a, b, c, d] = self.img_head.blocks_mut();
        let [e, f, g, h] = self.lang_head.blocks_mut();
        [a, b, c, d, e, f, g, h, core::slice::from_mut(&mut self.tau)]
    }

    pub fn zero(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.blocks().iter().flat_map(|b| b.iter()).map(|g| g * g).sum::<f64>())
    }
}

/// Everything that trains: both projection heads and the readiness threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub img_head: MlpHead,
    pub lang_head: MlpHead,
    pub tau: f64,
    pub grads: ParamGrads,
}

impl ParamSet {
    pub fn init(dims: HeadDims, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let img_head = MlpHead::init(dims.d, dims.h, dims.d_proj, &mut rng);
        let lang_head = MlpHead::init(dims.d, dims.h, dims.d_proj, &mut rng);
        Self {
            img_head,
            lang_head,
            tau: TAU_INIT,
            grads: ParamGrads::zeros(dims),
        }
    }

    /// Assemble from explicit heads; shapes must agree.
    pub fn from_parts(img_head: MlpHead, lang_head: MlpHead, tau: f64) -> Result<Self> {
        let dims = HeadDims {
            d: img_head.input_dim(),
            h: img_head.hidden_dim(),
            d_proj: img_head.output_dim(),
        };
        let lang_dims = (lang_head.input_dim(), lang_head.hidden_dim(), lang_head.output_dim());
        if lang_dims != (dims.d, dims.h, dims.d_proj)
            || img_head.b1.len() != dims.h
            || img_head.b2.len() != dims.d_proj
            || lang_head.b1.len() != dims.h
            || lang_head.b2.len() != dims.d_proj
            || img_head.w2.rows() != dims.h
            || lang_head.w2.rows() != dims.h
        {
            return Err(Error::Config("projection heads have inconsistent shapes".into()));
        }
        Ok(Self {
            img_head,
            lang_head,
            tau,
            grads: ParamGrads::zeros(dims),
        })
    }

    pub fn dims(&self) -> HeadDims {
        HeadDims {
            d: self.img_head.input_dim(),
            h: self.img_head.hidden_dim(),
            d_proj: self.img_head.output_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.img_head.param_count() + self.lang_head.param_count() + 1
    }

    pub fn blocks(&self) -> [&[f64]; 9] {
        let [a, b, c, d] = self.img_head.blocks();
        let [e, f, g, h] = self.lang_head.blocks();
        [a, b, c, d, e, f, g, h, core::slice::from_ref(&self.tau)]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        let [a, b, c, d] = self.img_head.blocks_mut();
        let [e, f, g, h] = self.lang_head.blocks_mut();
        [a, b, c, d, e, f, g, h, core::slice::from_mut(&mut self.tau)]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    /// Overwrite every parameter from a flat vector in block order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                op: "load_flat",
                expected: (self.param_count(), 1),
                found: (flat.len(), 1),
            });
        }
        let mut at = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Parameters only, gradients cleared.
    pub fn without_grads(&self) -> Self {
        Self {
            img_head: self.img_head.clone(),
            lang_head: self.lang_head.clone(),
            tau: self.tau,
            grads: ParamGrads::zeros(self.dims()),
        }
    }

    pub fn same_values(&self, other: &ParamSet) -> bool {
        self.blocks()
            .iter()
            .zip(other.blocks().iter())
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}
