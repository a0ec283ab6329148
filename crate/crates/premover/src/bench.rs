//! Per-step cost of the focus head against the emulated backbone step.

use std::hint::black_box;
use std::time::Instant;

use premover_core::focus::{average_views, focus_map, similarity, split_views};
use premover_core::numerics::{l2_normalize_rows, ParamSet, Tensor2D};
use premover_core::readiness::readiness_score;
use premover_core::simworld::{episode_scene, SuiteKind, VIEWS};
use serde::Serialize;

use crate::harness::Context;
use crate::AppError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub iterations: usize,
    pub warmup: usize,
    pub patches: usize,
    pub tokens: usize,
    pub focus_ms_median: f64,
    pub backbone_ms_median: f64,
    /// `focus_ms_median / backbone_ms_median`.
    pub fraction: f64,
    pub head_params: usize,
    pub backbone_params: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Everything the heads add to one step: both projections, similarity,
/// the map, view averaging and the readiness score.
pub fn focus_head_step(
    params: &ParamSet,
    h_img: &Tensor2D,
    h_lang: &Tensor2D,
    s: f64,
    k: usize,
) -> Result<f64, AppError> {
    let z_img = l2_normalize_rows(&params.img_head.apply(h_img)?);
    let z_lang = l2_normalize_rows(&params.lang_head.apply(h_lang)?);
    let map = focus_map(&similarity(&z_img, &z_lang)?, s);
    let avg = average_views(&split_views(&map, VIEWS)?)?;
    Ok(readiness_score(&avg.p, k)?)
}

/// Median wall time of both steps on a full-instruction frame.
pub fn run(ctx: &Context, params: &ParamSet) -> Result<BenchResult, AppError> {
    let cfg = &ctx.cfg;
    let scene = episode_scene(
        cfg.benchmark_seed,
        SuiteKind::Long,
        0,
        cfg.eval_episodes.start,
        cfg.grid,
    )?;
    let hs = ctx.emu.emit_hidden_states(&scene, &scene.instruction);
    let n_v = scene.patches_per_view();
    let d = ctx.emu.d();
    let mut h_img = Tensor2D::zeros(VIEWS * n_v, d);
    for (v, h) in hs.h_img.iter().enumerate() {
        h_img.data_mut()[v * n_v * d..(v + 1) * n_v * d].copy_from_slice(h.data());
    }
    let mut tokens = h_img.to_rows();
    tokens.extend(hs.h_lang.to_rows());
    let all_tokens = Tensor2D::from_rows(&tokens)?;
    let (s, k) = (cfg.rollout.focus.logit_scale, cfg.rollout.readiness.k);

    let mut focus = Vec::with_capacity(cfg.bench_iterations);
    let mut backbone = Vec::with_capacity(cfg.bench_iterations);
    for i in 0..cfg.bench_warmup + cfg.bench_iterations {
        let t = Instant::now();
        black_box(focus_head_step(params, black_box(&h_img), black_box(&hs.h_lang), s, k)?);
        let f = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        black_box(ctx.emu.trunk().forward(black_box(&all_tokens))?);
        let b = t.elapsed().as_secs_f64() * 1e3;
        if i >= cfg.bench_warmup {
            focus.push(f);
            backbone.push(b);
        }
    }
    let (fm, bm) = (median(focus), median(backbone));
    Ok(BenchResult {
        iterations: cfg.bench_iterations,
        warmup: cfg.bench_warmup,
        patches: VIEWS * n_v,
        tokens: hs.h_lang.rows(),
        focus_ms_median: fm,
        backbone_ms_median: bm,
        fraction: fm / bm,
        head_params: params.param_count(),
        backbone_params: ctx.emu.param_count(),
    })
}

pub fn render(r: &BenchResult) -> String {
    format!(
        "iterations {} (after {} warmup)\npatches {} tokens {}\nfocus head median {:.6} ms/step\nbackbone median {:.6} ms/step\nfraction {:.4}%\nparams head {} backbone {}\n",
        r.iterations,
        r.warmup,
        r.patches,
        r.tokens,
        r.focus_ms_median,
        r.backbone_ms_median,
        100.0 * r.fraction,
        r.head_params,
        r.backbone_params
    )
}
