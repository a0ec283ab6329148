//! Concentration-based readiness score, the latched gate and its loss.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::focus::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadinessConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for ReadinessConfig {
    fn default() -> Self {
        Self {
            k: 10,
            temperature: 0.10,
        }
    }
}

impl ReadinessConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::Config(alloc::format!("K must lie in 1..={n}, got {}", self.k)));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("readiness temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Gate state for one episode. `r` is `None` until a map exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadinessState {
    pub r: Option<f64>,
    pub tau: f64,
    pub committed: bool,
    pub commit_step: Option<usize>,
}

impl ReadinessState {
    pub fn new(tau: f64) -> Self {
        Self {
            r: None,
            tau,
            committed: false,
            commit_step: None,
        }
    }

    /// Already committed: only `r` is refreshed. Otherwise commit iff `r ≥ τ`.
    pub fn gate(mut self, r: f64, step: usize) -> Self {
        self.r = Some(r);
        if !self.committed && r >= self.tau {
            self.committed = true;
            self.commit_step = Some(step);
        }
        self
    }

    /// Force the latch, as protocols without a gate do.
    pub fn force_commit(mut self, step: usize) -> Self {
        if !self.committed {
            self.committed = true;
            self.commit_step = Some(step);
        }
        self
    }
}

/// Indices of the `k` largest entries, larger value first, lower index first on ties.
pub fn top_k_indices(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let by_value = |a: &usize, b: &usize| p[*b].total_cmp(&p[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, by_value);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_value);
    idx
}

/// `r = mean(top-K of p) − mean(p)`.
///
/// Both sums run over the values in rank order, relative to the largest
/// entry: constant maps score exactly zero and any permutation of `p` gives
/// the same bits.
pub fn readiness_score(p: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > p.len() {
        return Err(Error::Config(alloc::format!("K = {k} outside 1..={}", p.len())));
    }
    if k == p.len() {
        return Ok(0.0);
    }
    let mut sorted = p.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let c = sorted[0];
    let top_sum: f64 = sorted[..k].iter().map(|&v| v - c).sum();
    let all_sum = sorted[k..].iter().fold(top_sum, |acc, &v| acc + (v - c));
    Ok(top_sum / k as f64 - all_sum / p.len() as f64)
}

/// Score plus its subgradient with respect to `p`.
pub fn readiness_score_grad(p: &[f64], k: usize) -> Result<(f64, Vec<f64>)> {
    let r = readiness_score(p, k)?;
    let n = p.len() as f64;
    let mut g = vec![-1.0 / n; p.len()];
    for i in top_k_indices(p, k) {
        g[i] += 1.0 / k as f64;
    }
    Ok((r, g))
}

/// Temperature-scaled BCE on the gap `r − τ`. Returns `(loss, dL/dr, dL/dτ)`.
pub fn readiness_loss(r: f64, tau: f64, temperature: f64, y: bool) -> (f64, f64, f64) {
    let x = (r - tau) / temperature;
    let yv = if y { 1.0 } else { 0.0 };
    // softplus(x) − x = softplus(−x), without the cancellation.
    let loss = if y { softplus(-x) } else { softplus(x) };
    let d_r = (sigmoid(x) - yv) / temperature;
    (loss, d_r, -d_r)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// 1 iff every word of `target_name` occurs as a whole word in `prefix`,
/// case-insensitively.
pub fn readiness_label<S: AsRef<str>>(prefix: &[S], target_name: &str) -> Result<bool> {
    let words: Vec<String> = target_name.split_whitespace().map(normalize_word).collect();
    if words.iter().all(|w| w.is_empty()) {
        return Err(Error::Config("target name is empty".into()));
    }
    let seen: Vec<String> = prefix.iter().map(|w| normalize_word(w.as_ref())).collect();
    Ok(words.iter().filter(|w| !w.is_empty()).all(|w| seen.contains(w)))
}

/// Lowercase and strip surrounding punctuation.
pub fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}
