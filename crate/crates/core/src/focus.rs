//! Per-patch focus map from a streaming prefix, its class-balanced
//! supervision, and the floor-scaled injection weights.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::numerics::{dot, Tensor2D};
use crate::{Error, Result};

/// Clip bound for probabilities inside logarithms.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocusConfig {
    pub logit_scale: f64,
    pub floor_scale: f64,
    pub patches_per_view: usize,
    pub views: usize,
}

impl Default for FocusConfig {
    fn default() -> Self {
        Self {
            logit_scale: 6.0,
            floor_scale: 0.2,
            patches_per_view: 256,
            views: 2,
        }
    }
}

impl FocusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.floor_scale) {
            return Err(Error::Config(alloc::format!(
                "floor scale must lie in [0, 1], got {}",
                self.floor_scale
            )));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config("logit scale must be positive".into()));
        }
        if self.patches_per_view == 0 || self.views == 0 {
            return Err(Error::Config("need at least one patch and one view".into()));
        }
        Ok(())
    }

    pub fn total_patches(&self) -> usize {
        self.patches_per_view * self.views
    }
}

/// Probability per patch that it is referred to by the current prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusMap {
    pub p: Vec<f64>,
    pub source_step: usize,
}

impl FocusMap {
    pub fn new(p: Vec<f64>, source_step: usize) -> Self {
        Self { p, source_step }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Binary supervision mask over patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetMask {
    pub m_star: Vec<bool>,
}

impl TargetMask {
    pub fn new(m_star: Vec<bool>) -> Self {
        Self { m_star }
    }

    pub fn from_indices(n: usize, positives: impl IntoIterator<Item = usize>) -> Self {
        let mut m_star = vec![false; n];
        for i in positives {
            m_star[i] = true;
        }
        Self { m_star }
    }

    pub fn len(&self) -> usize {
        self.m_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_star.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.m_star.iter().filter(|&&m| m).count()
    }

    /// Patch-wise OR, for masks that cover several referents.
    pub fn union(&self, other: &TargetMask) -> Result<TargetMask> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                op: "mask_union",
                expected: (self.len(), 1),
                found: (other.len(), 1),
            });
        }
        Ok(TargetMask {
            m_star: self.m_star.iter().zip(&other.m_star).map(|(a, b)| *a || *b).collect(),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `S = Z_img · Z_langᵀ` for row-normalized inputs.
pub fn similarity(z_img: &Tensor2D, z_lang: &Tensor2D) -> Result<Tensor2D> {
    if z_lang.rows() == 0 {
        return Err(Error::EmptyPrefix);
    }
    z_img.matmul_nt(z_lang)
}

/// Row-wise max of `s` and the column that attains it (lowest index on ties).
pub fn max_over_tokens(s: &Tensor2D) -> (Vec<f64>, Vec<usize>) {
    let mut best = Vec::with_capacity(s.rows());
    let mut arg = Vec::with_capacity(s.rows());
    for i in 0..s.rows() {
        let row = s.row(i);
        let mut j_best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[j_best] {
                j_best = j;
            }
        }
        best.push(row[j_best]);
        arg.push(j_best);
    }
    (best, arg)
}

/// `p_i = σ(s · max_j S_ij)`.
pub fn focus_map(s: &Tensor2D, logit_scale: f64) -> FocusMap {
    focus_map_with_argmax(s, logit_scale).0
}

pub fn focus_map_with_argmax(s: &Tensor2D, logit_scale: f64) -> (FocusMap, Vec<usize>) {
    let (best, arg) = max_over_tokens(s);
    let p = best.iter().map(|&m| sigmoid(logit_scale * m)).collect();
    (FocusMap::new(p, 0), arg)
}

/// Class-balanced BCE and its gradient with respect to `p`.
pub fn focus_loss(p: &[f64], mask: &TargetMask) -> Result<(f64, Vec<f64>)> {
    if p.len() != mask.len() {
        return Err(Error::Dimension {
            op: "focus_loss",
            expected: (mask.len(), 1),
            found: (p.len(), 1),
        });
    }
    if p.is_empty() {
        return Err(Error::Config("focus loss needs at least one patch".into()));
    }
    let n_pos = mask.positives();
    let n_neg = p.len() - n_pos;
    // An all-positive mask has nothing to balance against.
    let beta_pos = if n_neg == 0 {
        1.0
    } else {
        n_neg as f64 / n_pos.max(1) as f64
    };

    let mut weight_sum = 0.0;
    let mut acc = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (i, (&pi, &pos)) in p.iter().zip(&mask.m_star).enumerate() {
        let beta = if pos { beta_pos } else { 1.0 };
        let pc = pi.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let inside = pc == pi;
        if pos {
            acc -= beta * libm::log(pc);
            if inside {
                grad[i] = -beta / pc;
            }
        } else {
            acc -= beta * libm::log(1.0 - pc);
            if inside {
                grad[i] = beta / (1.0 - pc);
            }
        }
        weight_sum += beta;
    }
    grad.iter_mut().for_each(|g| *g /= weight_sum);
    Ok((acc / weight_sum, grad))
}

/// `w_i = α + (1 − α)·p_i`.
pub fn injection_weights(p: &[f64], alpha: f64) -> Vec<f64> {
    p.iter().map(|&pi| alpha + (1.0 - alpha) * pi).collect()
}

/// Scale row `i` of `e_img` by `w[i]`.
pub fn inject(e_img: &Tensor2D, w: &[f64]) -> Result<Tensor2D> {
    if w.len() != e_img.rows() {
        return Err(Error::Dimension {
            op: "inject",
            expected: (e_img.rows(), 1),
            found: (w.len(), 1),
        });
    }
    let mut out = e_img.clone();
    for (i, &wi) in w.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= wi);
    }
    Ok(out)
}

/// Elementwise mean of per-view maps.
pub fn average_views(maps: &[FocusMap]) -> Result<FocusMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("no views to average".into()))?;
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let n = first.len();
    let mut acc = vec![0.0; n];
    for m in maps {
        if m.len() != n {
            return Err(Error::Dimension {
                op: "average_views",
                expected: (n, 1),
                found: (m.len(), 1),
            });
        }
        for (a, v) in acc.iter_mut().zip(&m.p) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(FocusMap::new(acc, first.source_step))
}

/// Split a concatenated map of `views × n_v` entries into per-view maps.
pub fn split_views(p: &FocusMap, views: usize) -> Result<Vec<FocusMap>> {
    if views == 0 || !p.len().is_multiple_of(views) {
        return Err(Error::Dimension {
            op: "split_views",
            expected: (views, p.len() / views.max(1)),
            found: (p.len(), 1),
        });
    }
    let n_v = p.len() / views;
    Ok(p.p
        .chunks(n_v)
        .map(|c| FocusMap::new(c.to_vec(), p.source_step))
        .collect())
}

/// Running per-patch max over revealed tokens.
///
/// Tokens are pushed one at a time as the prefix grows; individual patch rows
/// can be replaced when the scene changes. Results match the batch
/// [`similarity`] + [`max_over_tokens`] path bit for bit.
#[derive(Debug, Clone)]
pub struct StreamingFocus {
    z_img: Tensor2D,
    z_lang: Vec<Vec<f64>>,
    best: Vec<f64>,
    arg: Vec<usize>,
}

impl StreamingFocus {
    pub fn new(z_img: Tensor2D) -> Self {
        let n = z_img.rows();
        Self {
            z_img,
            z_lang: Vec::new(),
            best: vec![f64::NEG_INFINITY; n],
            arg: vec![0; n],
        }
    }

    pub fn tokens(&self) -> usize {
        self.z_lang.len()
    }

    pub fn patches(&self) -> usize {
        self.z_img.rows()
    }

    pub fn push_token(&mut self, z_tok: &[f64]) -> Result<()> {
        if z_tok.len() != self.z_img.cols() {
            return Err(Error::Dimension {
                op: "push_token",
                expected: (1, self.z_img.cols()),
                found: (1, z_tok.len()),
            });
        }
        let j = self.z_lang.len();
        for i in 0..self.z_img.rows() {
            let v = dot(self.z_img.row(i), z_tok);
            if j == 0 || v > self.best[i] {
                self.best[i] = v;
                self.arg[i] = j;
            }
        }
        self.z_lang.push(z_tok.to_vec());
        Ok(())
    }

    /// Replace patch row `i` and rescan it against every revealed token.
    pub fn replace_patch(&mut self, i: usize, z_row: &[f64]) -> Result<()> {
        if z_row.len() != self.z_img.cols() {
            return Err(Error::Dimension {
                op: "replace_patch",
                expected: (1, self.z_img.cols()),
                found: (1, z_row.len()),
            });
        }
        self.z_img.row_mut(i).copy_from_slice(z_row);
        self.best[i] = f64::NEG_INFINITY;
        self.arg[i] = 0;
        for (j, t) in self.z_lang.iter().enumerate() {
            let v = dot(self.z_img.row(i), t);
            if j == 0 || v > self.best[i] {
                self.best[i] = v;
                self.arg[i] = j;
            }
        }
        Ok(())
    }

    pub fn max_similarity(&self) -> &[f64] {
        &self.best
    }

    pub fn argmax(&self) -> &[usize] {
        &self.arg
    }

    pub fn map(&self, logit_scale: f64, step: usize) -> Result<FocusMap> {
        if self.z_lang.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        let p = self.best.iter().map(|&m| sigmoid(logit_scale * m)).collect();
        Ok(FocusMap::new(p, step))
    }
}
