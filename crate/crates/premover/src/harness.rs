//! Parallel rollouts, training and sweeps over a resolved [`RunConfig`].
//!
//! Every episode is generated from its own seed and results are collected in
//! job order, so the worker count never changes an output.

use premover_core::metrics::{aggregate_labeled, select_best, MetricsTable, SweepPoint};
use premover_core::numerics::ParamSet;
use premover_core::simworld::{episode_scene, rollout, BackboneEmulation, EpisodeReport, Protocol, SuiteKind};
use premover_core::training::{episode_samples, train, Dataset, EpochLog, TrainSample};
use rayon::prelude::*;

use crate::config::{EpisodeRange, RunConfig, Setting};
use crate::AppError;

/// Resolved configuration plus the frozen emulator built from it.
pub struct Context {
    pub cfg: RunConfig,
    pub emu: BackboneEmulation,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self, AppError> {
        cfg.validate()?;
        let emu = BackboneEmulation::new(cfg.benchmark_seed, cfg.emulator)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| AppError::Runtime(format!("worker pool: {e}")))?;
        Ok(Self { cfg, emu, pool })
    }

    fn episodes(&self, range: EpisodeRange) -> Vec<(SuiteKind, usize, usize)> {
        let mut out = Vec::new();
        for &suite in &self.cfg.suites {
            for task in 0..self.cfg.tasks_per_suite {
                for ep in range.range() {
                    out.push((suite, task, ep));
                }
            }
        }
        out
    }
}

/// One rollout to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub suite: SuiteKind,
    pub task: usize,
    pub episode: usize,
    pub protocol: Protocol,
    pub alpha: f64,
    pub k: usize,
    pub keep_trace: bool,
}

/// Run `jobs` on the worker pool; reports come back in job order.
pub fn run_jobs(ctx: &Context, params: Option<&ParamSet>, jobs: &[Job]) -> Result<Vec<EpisodeReport>, AppError> {
    ctx.pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let scene = episode_scene(ctx.cfg.benchmark_seed, j.suite, j.task, j.episode, ctx.cfg.grid)?;
                let mut rc = ctx.cfg.rollout;
                rc.readiness.k = j.k;
                let mut r = rollout(&scene, &ctx.emu, j.protocol, params, j.alpha, &rc)?;
                if !j.keep_trace {
                    r.trace = Vec::new();
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>, premover_core::Error>>()
            .map_err(AppError::from)
    })
}

fn jobs_for(ctx: &Context, range: EpisodeRange, protocol: Protocol, alpha: f64, k: usize) -> Vec<Job> {
    ctx.episodes(range)
        .into_iter()
        .map(|(suite, task, episode)| Job {
            suite,
            task,
            episode,
            protocol,
            alpha,
            k,
            keep_trace: false,
        })
        .collect()
}

fn require(params: Option<&ParamSet>) -> Result<&ParamSet, AppError> {
    params.ok_or_else(|| AppError::Config("this command needs a trained checkpoint".into()))
}

/// Training and held-out (calibration-episode) datasets.
pub fn build_datasets(ctx: &Context) -> Result<(Dataset, Dataset), AppError> {
    let build = |range: EpisodeRange| -> Result<Dataset, AppError> {
        let eps = ctx.episodes(range);
        let parts: Vec<Vec<Vec<TrainSample>>> = ctx.pool.install(|| {
            eps.par_iter()
                .map(|&(suite, task, ep)| {
                    episode_samples(
                        &ctx.emu,
                        ctx.cfg.benchmark_seed,
                        suite,
                        task,
                        ep,
                        ctx.cfg.grid,
                        ctx.cfg.stride,
                    )
                })
                .collect::<Result<_, _>>()
        })?;
        let groups: Vec<Vec<TrainSample>> = parts.into_iter().flatten().collect();
        if groups.is_empty() {
            return Err(AppError::Config(format!("episodes {range} produce no training frames")));
        }
        Ok(Dataset { groups })
    };
    Ok((build(ctx.cfg.train_episodes)?, build(ctx.cfg.calibration_episodes)?))
}

/// Train from the configured initialization. `on_epoch` may stop early.
pub fn train_heads(
    ctx: &Context,
    train_set: &Dataset,
    heldout: &Dataset,
    on_epoch: impl FnMut(&EpochLog, &ParamSet) -> bool,
) -> Result<(ParamSet, Vec<EpochLog>), AppError> {
    let init = ParamSet::init(ctx.cfg.head_dims(), ctx.cfg.init_seed);
    let mut tc = ctx.cfg.train;
    tc.loss.logit_scale = ctx.cfg.rollout.focus.logit_scale;
    tc.loss.views = ctx.cfg.rollout.focus.views;
    Ok(train(init, train_set, heldout, &tc, on_epoch)?)
}

/// Premover success on the calibration split for every grid α.
pub fn sweep_alpha(ctx: &Context, params: Option<&ParamSet>, grid: &[f64]) -> Result<Vec<SweepPoint>, AppError> {
    let params = require(params)?;
    grid.iter()
        .map(|&a| {
            let jobs = jobs_for(
                ctx,
                ctx.cfg.calibration_episodes,
                Protocol::Premover,
                a,
                ctx.cfg.rollout.readiness.k,
            );
            Ok(SweepPoint::from_reports(a, &run_jobs(ctx, Some(params), &jobs)?))
        })
        .collect()
}

/// α with the best calibration success (ties go to the larger α).
pub fn calibrate_alpha(ctx: &Context, params: Option<&ParamSet>) -> Result<(f64, Vec<SweepPoint>), AppError> {
    let points = sweep_alpha(ctx, params, &ctx.cfg.alpha_grid)?;
    Ok((select_best(&points)?, points))
}

/// Premover success on the calibration split for every grid K.
pub fn sweep_k(
    ctx: &Context,
    params: Option<&ParamSet>,
    alpha: f64,
    grid: &[usize],
) -> Result<Vec<SweepPoint>, AppError> {
    let params = require(params)?;
    grid.iter()
        .map(|&k| {
            let jobs = jobs_for(ctx, ctx.cfg.calibration_episodes, Protocol::Premover, alpha, k);
            Ok(SweepPoint::from_reports(k as f64, &run_jobs(ctx, Some(params), &jobs)?))
        })
        .collect()
}

/// Reports of one evaluated setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingRun {
    pub setting: Setting,
    pub alpha: f64,
    pub reports: Vec<EpisodeReport>,
}

/// Every configured setting on the eval split, all from the same scenes.
pub fn evaluate(ctx: &Context, params: Option<&ParamSet>, alpha: f64) -> Result<Vec<SettingRun>, AppError> {
    let mut out = Vec::new();
    for &setting in &ctx.cfg.settings {
        let protocol = setting.protocol();
        if protocol == Protocol::Premover {
            require(params)?;
        }
        let a = setting.alpha(alpha);
        let jobs = jobs_for(ctx, ctx.cfg.eval_episodes, protocol, a, ctx.cfg.rollout.readiness.k);
        out.push(SettingRun {
            setting,
            alpha: a,
            reports: run_jobs(ctx, params, &jobs)?,
        });
    }
    Ok(out)
}

pub fn table(runs: &[SettingRun]) -> Result<MetricsTable, AppError> {
    let labeled = runs
        .iter()
        .flat_map(|run| run.reports.iter().map(move |r| (run.setting.name(), r)));
    Ok(aggregate_labeled(labeled, Setting::FullPrompt.name())?)
}
