use alloc::format;
use alloc::vec::Vec;

use super::dataset::{Dataset, TrainSample};
use super::loss::{batch_loss, frame_pass, view_average, LossConfig, SampleOutput};
use crate::numerics::{AdamWState, ParamGrads, ParamSet};
use crate::readiness::readiness_score;
use crate::rng::SeededRng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            batch_size: 32,
            epochs: 40,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("weight decay must be >= 0 and clip norm > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.loss.temperature > 0.0 && self.loss.logit_scale > 0.0) {
            return Err(Error::Config("temperature and logit scale must be positive".into()));
        }
        if self.loss.k == 0 || self.loss.views == 0 {
            return Err(Error::Config("K and views must be positive".into()));
        }
        Ok(())
    }
}

/// Held-out quality of a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    /// Mean IoU of `p ≥ 0.5` against `m*` over positive samples.
    pub iou: f64,
    /// Fraction of samples where `r ≥ τ` equals the label.
    pub readiness_accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub mean_grad_norm: f64,
    pub tau: f64,
    pub steps: usize,
    pub eval: EvalMetrics,
}

pub fn iou_at_half(p: &[f64], mask: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&pi, &m) in p.iter().zip(mask) {
        let on = pi >= 0.5;
        inter += (on && m) as usize;
        union += (on || m) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn summarize(
    params: &ParamSet,
    samples: &[&TrainSample],
    outs: &[SampleOutput],
    views: usize,
    k: usize,
) -> Result<EvalMetrics> {
    let (mut iou, mut positives, mut correct, mut loss) = (0.0, 0usize, 0usize, 0.0);
    for (s, o) in samples.iter().zip(outs) {
        loss += o.loss;
        if let Some(m) = &s.m_star {
            iou += iou_at_half(&o.p, &m.m_star);
            positives += 1;
        }
        let r = readiness_score(&view_average(&o.p, views), k)?;
        correct += ((r >= params.tau) == s.y) as usize;
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        iou: if positives == 0 { 0.0 } else { iou / positives as f64 },
        readiness_accuracy: correct as f64 / n,
        samples: samples.len(),
    })
}

pub fn evaluate(params: &ParamSet, data: &Dataset, cfg: &LossConfig) -> Result<EvalMetrics> {
    let mut outs = Vec::with_capacity(data.len());
    for g in &data.groups {
        outs.extend(frame_pass(params, g, cfg, 1.0, None)?);
    }
    let samples: Vec<&TrainSample> = data.samples().collect();
    summarize(params, &samples, &outs, cfg.views, cfg.k)
}

/// Frame groups in shuffled order, packed into batches of at least
/// `batch_size` samples (the last batch may be smaller).
pub fn frame_batches(data: &Dataset, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.groups.len()).collect();
    rng.shuffle(&mut order);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut count = 0;
    for g in order {
        count += data.groups[g].len();
        cur.push(g);
        if count >= batch_size {
            batches.push(core::mem::take(&mut cur));
            count = 0;
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// One epoch of AdamW over `data`. Returns (mean batch loss, mean grad norm).
pub fn train_epoch(
    params: &mut ParamSet,
    opt: &mut AdamWState,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(f64, f64, usize)> {
    let batches = frame_batches(data, cfg.batch_size, rng);
    let (mut loss_sum, mut norm_sum) = (0.0, 0.0);
    for b in &batches {
        let groups: Vec<&[TrainSample]> = b.iter().map(|&g| data.groups[g].as_slice()).collect();
        let mut grads = ParamGrads::zeros(params.dims());
        let (loss, _) = batch_loss(params, &groups, &cfg.loss, Some(&mut grads))?;
        params.grads = grads;
        norm_sum += opt.step(params)?;
        loss_sum += loss;
    }
    let n = batches.len().max(1) as f64;
    Ok((loss_sum / n, norm_sum / n, batches.len()))
}

/// Full training run. `on_epoch` sees every epoch's log and parameters
/// (for logging and checkpointing) and may stop early by returning false.
pub fn train(
    init: ParamSet,
    train_data: &Dataset,
    heldout: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ParamSet) -> bool,
) -> Result<(ParamSet, Vec<EpochLog>)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut params = init;
    let mut opt = AdamWState::new(&params, cfg.lr, cfg.weight_decay, cfg.clip_norm);
    let mut rng = SeededRng::new(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (train_loss, mean_grad_norm, steps) = train_epoch(&mut params, &mut opt, train_data, cfg, &mut rng)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss diverged in epoch {epoch}")));
        }
        let eval_set = if heldout.is_empty() { train_data } else { heldout };
        let log = EpochLog {
            epoch,
            train_loss,
            mean_grad_norm,
            tau: params.tau,
            steps,
            eval: evaluate(&params, eval_set, &cfg.loss)?,
        };
        logs.push(log);
        if !on_epoch(&log, &params) {
            break;
        }
    }
    Ok((params, logs))
}
