use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::dataset::TrainSample;
use crate::focus::{focus_loss, max_over_tokens, sigmoid, similarity};
use crate::numerics::{
    l2_normalize_rows_backward, l2_normalize_rows_with_norms, MlpCache, ParamGrads, ParamSet, Tensor2D,
};
use crate::readiness::{readiness_loss, readiness_score_grad};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_focus: f64,
    pub lambda_ready: f64,
    pub temperature: f64,
    pub logit_scale: f64,
    pub k: usize,
    pub views: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_focus: 1.0,
            lambda_ready: 1.0,
            temperature: 0.1,
            logit_scale: 6.0,
            k: 10,
            views: 2,
        }
    }
}

/// Projected, normalized image rows with what the backward pass needs.
pub struct Projection {
    pub z: Tensor2D,
    raw: Tensor2D,
    norms: Vec<f64>,
    cache: MlpCache,
}

fn project(head: &crate::numerics::MlpHead, h: &Tensor2D) -> Result<Projection> {
    let (raw, cache) = head.forward(h)?;
    let (z, norms) = l2_normalize_rows_with_norms(&raw);
    Ok(Projection { z, raw, norms, cache })
}

/// Per-sample losses and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub loss: f64,
    pub focus: Option<f64>,
    pub ready: f64,
    pub r: f64,
    /// Concatenated per-view focus map.
    pub p: Vec<f64>,
}

/// View-averaged map of a concatenated `views × n_v` map.
pub fn view_average(p: &[f64], views: usize) -> Vec<f64> {
    let n_v = p.len() / views;
    (0..n_v)
        .map(|i| (0..views).map(|v| p[v * n_v + i]).sum::<f64>() / views as f64)
        .collect()
}

/// Forward (and optionally backward) for one prefix against a projected frame.
/// Gradients are scaled by `scale`; image-side gradients land in `d_z_img`.
fn sample_pass(
    params: &ParamSet,
    img: &Projection,
    sample: &TrainSample,
    cfg: &LossConfig,
    scale: f64,
    back: Option<(&mut Tensor2D, &mut ParamGrads)>,
) -> Result<SampleOutput> {
    let lang = project(&params.lang_head, &sample.h_lang)?;
    let s = similarity(&img.z, &lang.z)?;
    let (best, arg) = max_over_tokens(&s);
    let p: Vec<f64> = best.iter().map(|&m| sigmoid(cfg.logit_scale * m)).collect();

    let (focus, d_focus) = match &sample.m_star {
        Some(mask) if sample.y => {
            let (l, g) = focus_loss(&p, mask)?;
            (Some(l), Some(g))
        }
        _ => (None, None),
    };
    let avg = view_average(&p, cfg.views);
    let (r, dr_davg) = readiness_score_grad(&avg, cfg.k)?;
    let (ready, dl_dr, dl_dtau) = readiness_loss(r, params.tau, cfg.temperature, sample.y);
    let loss = cfg.lambda_focus * focus.unwrap_or(0.0) + cfg.lambda_ready * ready;
    if !loss.is_finite() {
        let id = sample.id;
        return Err(Error::NonFinite(format!(
            "loss at sample {}/{}/{}/{}",
            id.suite.name(),
            id.task,
            id.episode,
            id.frame
        )));
    }

    if let Some((d_z_img, grads)) = back {
        let n_v = avg.len();
        let mut d_best = vec![0.0; p.len()];
        for (i, db) in d_best.iter_mut().enumerate() {
            let mut dp = cfg.lambda_ready * dl_dr * dr_davg[i % n_v] / cfg.views as f64;
            if let Some(g) = &d_focus {
                dp += cfg.lambda_focus * g[i];
            }
            *db = scale * dp * cfg.logit_scale * p[i] * (1.0 - p[i]);
        }
        let mut d_z_lang = Tensor2D::zeros(lang.z.rows(), lang.z.cols());
        for (i, &db) in d_best.iter().enumerate() {
            if db == 0.0 {
                continue;
            }
            let j = arg[i];
            let zl = lang.z.row(j).to_vec();
            for (d, &v) in d_z_img.row_mut(i).iter_mut().zip(&zl) {
                *d += db * v;
            }
            let zi = img.z.row(i);
            for (d, &v) in d_z_lang.row_mut(j).iter_mut().zip(zi) {
                *d += db * v;
            }
        }
        let d_raw = l2_normalize_rows_backward(&lang.z, &lang.norms, &d_z_lang, &lang.raw);
        params.lang_head.backward(&lang.cache, &d_raw, &mut grads.lang_head)?;
        grads.tau += scale * cfg.lambda_ready * dl_dtau;
    }

    Ok(SampleOutput {
        loss,
        focus,
        ready,
        r,
        p,
    })
}

/// Losses for the prefixes of one frame; accumulates `scale`-weighted
/// gradients when `grads` is given.
pub fn frame_pass(
    params: &ParamSet,
    group: &[TrainSample],
    cfg: &LossConfig,
    scale: f64,
    mut grads: Option<&mut ParamGrads>,
) -> Result<Vec<SampleOutput>> {
    let Some(first) = group.first() else {
        return Ok(Vec::new());
    };
    let img = project(&params.img_head, &first.h_img)?;
    let mut d_z_img = Tensor2D::zeros(img.z.rows(), img.z.cols());
    let mut out = Vec::with_capacity(group.len());
    for sample in group {
        let back = grads.as_deref_mut().map(|g| (&mut d_z_img, g));
        out.push(sample_pass(params, &img, sample, cfg, scale, back)?);
    }
    if let Some(g) = grads {
        let d_raw = l2_normalize_rows_backward(&img.z, &img.norms, &d_z_img, &img.raw);
        params.img_head.backward(&img.cache, &d_raw, &mut g.img_head)?;
    }
    Ok(out)
}

/// Mean joint loss over a batch of frame groups. Gradients of that mean are
/// added to `grads` when given.
pub fn batch_loss(
    params: &ParamSet,
    batch: &[&[TrainSample]],
    cfg: &LossConfig,
    mut grads: Option<&mut ParamGrads>,
) -> Result<(f64, Vec<SampleOutput>)> {
    let n: usize = batch.iter().map(|g| g.len()).sum();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut outs = Vec::with_capacity(n);
    for group in batch {
        outs.extend(frame_pass(params, group, cfg, scale, grads.as_deref_mut())?);
    }
    let loss = outs.iter().map(|o| o.loss).sum::<f64>() * scale;
    Ok((loss, outs))
}
