//! `premover` subcommands. Flags override the config file, which overrides
//! defaults; `PREMOVER_SEED` only fills a seed nobody else set.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use premover_core::numerics::ParamSet;
use premover_core::simworld::SuiteKind;
use serde::Serialize;

use crate::config::{EpisodeRange, RunConfig, Setting};
use crate::harness::{self, Context};
use crate::report::{self, write_atomic, MetricsDoc, SweepDoc, METRICS_SCHEMA, SWEEP_SCHEMA};
use crate::{bench, checkpoint, gateway, AppError};

pub const TRAIN_SCHEMA: &str = "premover-train-v1";

#[derive(Debug, Parser)]
#[command(
    name = "premover",
    version,
    about = "Train, evaluate and serve the streaming focus head and readiness gate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Benchmark seed (falls back to PREMOVER_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated suites: spatial,object,goal,long.
    #[arg(long, global = true, value_delimiter = ',')]
    pub suites: Option<Vec<String>>,
    /// Episode range A..B of the split the command works on.
    #[arg(long, global = true)]
    pub episodes: Option<EpisodeRange>,
    /// Comma-separated settings: full_prompt,naive,premover,gate_only.
    #[arg(long, global = true, value_delimiter = ',')]
    pub protocols: Option<Vec<String>>,
    /// Fixed injection floor α (skips calibration).
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Readiness top-K.
    #[arg(long, global = true)]
    pub k: Option<u32>,
    /// Gate threshold override.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true)]
    pub workers: Option<u32>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint to load (default: <out>/checkpoint.json)
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Gateway address for `serve`.
    #[arg(long, global = true)]
    pub listen: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train the heads and τ; writes a checkpoint and a JSON-lines log.
    Train,
    /// Evaluate every setting on the eval split.
    Eval,
    /// Premover success over the α grid on the calibration split.
    SweepAlpha,
    /// Premover success over the K grid on the calibration split.
    SweepK,
    /// Median per-step cost of the focus head against the backbone step.
    BenchOverhead,
    /// Start the live typing gateway.
    Serve,
}

impl Cli {
    /// Resolve flags, config file and environment into a validated config.
    pub fn resolve(&self, env_seed: Option<u64>) -> Result<RunConfig, AppError> {
        let mut c = RunConfig::load(self.config.as_deref(), env_seed)?;
        if let Some(s) = self.seed {
            c.benchmark_seed = s;
        }
        if let Some(list) = &self.suites {
            c.suites = list.iter().map(|s| SuiteKind::parse(s)).collect::<Result<_, _>>()?;
        }
        if let Some(r) = self.episodes {
            match self.command {
                Command::Train => c.train_episodes = r,
                Command::Eval => c.eval_episodes = r,
                Command::SweepAlpha | Command::SweepK => c.calibration_episodes = r,
                Command::BenchOverhead | Command::Serve => {}
            }
        }
        if let Some(list) = &self.protocols {
            c.settings = list
                .iter()
                .map(|s| s.parse::<Setting>().map_err(AppError::Config))
                .collect::<Result<_, _>>()?;
        }
        if let Some(a) = self.alpha {
            c.alpha = Some(a);
        }
        if let Some(k) = self.k {
            c.rollout.readiness.k = k as usize;
            c.train.loss.k = k as usize;
        }
        if let Some(t) = self.tau {
            c.rollout.tau_override = Some(t);
        }
        if let Some(w) = self.workers {
            c.workers = w as usize;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(p) = &self.checkpoint {
            c.checkpoint = Some(p.clone());
        }
        if let Some(l) = &self.listen {
            c.listen = l.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parse, run and map the outcome to an exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("premover: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), AppError> {
    let cfg = cli.resolve(RunConfig::env_seed()?)?;
    match cli.command {
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::SweepAlpha => cmd_sweep_alpha(cfg),
        Command::SweepK => cmd_sweep_k(cfg),
        Command::BenchOverhead => cmd_bench_overhead(cfg),
        Command::Serve => cmd_serve(cfg),
    }
}

fn load_params(cfg: &RunConfig) -> Result<ParamSet, AppError> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(AppError::Config(format!(
            "checkpoint {} not found; run `premover train` first or pass --checkpoint",
            path.display()
        )));
    }
    let (params, _) = checkpoint::load(&path)?;
    if params.dims() != cfg.head_dims() {
        return Err(AppError::Config(format!(
            "checkpoint heads {:?} do not match the configured {:?}",
            params.dims(),
            cfg.head_dims()
        )));
    }
    Ok(params)
}

fn write_text(cfg: &RunConfig, name: &str, text: &str) -> Result<PathBuf, AppError> {
    let p = cfg.out_dir.join(name);
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    train_samples: usize,
    train_frames: usize,
    heldout_samples: usize,
    train_dataset_hash: String,
    heldout_dataset_hash: String,
    trainable_params: usize,
    backbone_embedding_params: usize,
    trainable_fraction_of_embeddings: f64,
    emulator_hash_before: String,
    emulator_hash_after: String,
    epochs: usize,
    final_epoch: Option<premover_core::training::EpochLog>,
}

pub fn cmd_train(cfg: RunConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let ctx = Context::new(cfg)?;
    let cfg = &ctx.cfg;
    let hash_before = ctx.emu.state_hash();
    let (train_set, heldout) = harness::build_datasets(&ctx)?;
    eprintln!(
        "dataset: {} samples / {} frames, held-out {} samples ({:.1}s)",
        train_set.len(),
        train_set.frames(),
        heldout.len(),
        started.elapsed().as_secs_f64()
    );
    let ckpt = cfg.checkpoint_path();
    let log_path = cfg.out_dir.join("train_log.jsonl");
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut io_err: Option<AppError> = None;
    let result = harness::train_heads(&ctx, &train_set, &heldout, |l, p| {
        let step = (|| -> Result<(), AppError> {
            checkpoint::save(&ckpt, p, cfg.init_seed)?;
            let line = serde_json::to_string(l).map_err(|e| AppError::Runtime(e.to_string()))?;
            writeln!(log, "{line}")?;
            log.flush()?;
            Ok(())
        })();
        eprintln!(
            "epoch {:>3}  loss {:.5}  held-out iou {:.4}  ready acc {:.4}  tau {:.5}  ({:.1}s)",
            l.epoch,
            l.train_loss,
            l.eval.iou,
            l.eval.readiness_accuracy,
            l.tau,
            started.elapsed().as_secs_f64()
        );
        match step {
            Ok(()) => true,
            Err(e) => {
                io_err = Some(e);
                false
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    let (params, logs) = result?;
    checkpoint::save(&ckpt, &params, cfg.init_seed)?;
    let hash_after = ctx.emu.state_hash();
    if hash_after != hash_before {
        return Err(AppError::Runtime("the frozen emulator changed during training".into()));
    }
    let summary = TrainSummary {
        schema: TRAIN_SCHEMA,
        config: cfg,
        train_samples: train_set.len(),
        train_frames: train_set.frames(),
        heldout_samples: heldout.len(),
        train_dataset_hash: format!("{:016x}", train_set.content_hash()),
        heldout_dataset_hash: format!("{:016x}", heldout.content_hash()),
        trainable_params: params.param_count(),
        backbone_embedding_params: ctx.emu.embedding_param_count(),
        trainable_fraction_of_embeddings: params.param_count() as f64 / ctx.emu.embedding_param_count() as f64,
        emulator_hash_before: format!("{hash_before:016x}"),
        emulator_hash_after: format!("{hash_after:016x}"),
        epochs: logs.len(),
        final_epoch: logs.last().copied(),
    };
    let p = write_text(cfg, "train_summary.json", &report::to_json_pretty(&summary)?)?;
    println!("checkpoint {}", ckpt.display());
    println!("summary {}", p.display());
    if let Some(l) = logs.last() {
        println!(
            "held-out iou {:.4}, readiness accuracy {:.4}, tau {:.5}",
            l.eval.iou, l.eval.readiness_accuracy, l.tau
        );
    }
    eprintln!("training wall time {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

pub fn cmd_eval(cfg: RunConfig) -> Result<(), AppError> {
    let params = load_params(&cfg)?;
    let ctx = Context::new(cfg)?;
    let cfg = &ctx.cfg;
    let needs_alpha = cfg.settings.iter().any(|s| s.needs_alpha());
    let (alpha, source, calibration) = match cfg.alpha {
        Some(a) => (a, "config", Vec::new()),
        None if needs_alpha => {
            let (a, points) = harness::calibrate_alpha(&ctx, Some(&params))?;
            (a, "calibrated", points)
        }
        None => (cfg.rollout.focus.floor_scale, "default", Vec::new()),
    };
    let runs = harness::evaluate(&ctx, Some(&params), alpha)?;
    let table = harness::table(&runs)?;
    let doc = MetricsDoc {
        schema: METRICS_SCHEMA,
        config: cfg,
        alpha,
        alpha_source: source,
        calibration: &calibration,
        table: &table,
    };
    write_text(cfg, "metrics.json", &report::to_json_pretty(&doc)?)?;
    write_text(cfg, "metrics.csv", &report::metrics_csv(&table))?;
    let text = report::metrics_text(&table);
    write_text(cfg, "metrics.txt", &text)?;
    write_text(cfg, "episodes.jsonl", &report::episodes_jsonl(&runs)?)?;
    println!("alpha {alpha} ({source})");
    print!("{text}");
    Ok(())
}

pub fn cmd_sweep_alpha(cfg: RunConfig) -> Result<(), AppError> {
    let params = load_params(&cfg)?;
    let ctx = Context::new(cfg)?;
    let cfg = &ctx.cfg;
    let points = harness::sweep_alpha(&ctx, Some(&params), &cfg.alpha_grid)?;
    let selected = premover_core::metrics::select_best(&points)?;
    let doc = SweepDoc {
        schema: SWEEP_SCHEMA,
        config: cfg,
        parameter: "alpha",
        alpha: None,
        points: &points,
        selected: Some(selected),
    };
    write_text(cfg, "alpha_sweep.json", &report::to_json_pretty(&doc)?)?;
    write_text(cfg, "alpha_sweep.csv", &report::sweep_csv("alpha", &points))?;
    print!("{}", report::sweep_text("alpha", &points, Some(selected)));
    Ok(())
}

pub fn cmd_sweep_k(cfg: RunConfig) -> Result<(), AppError> {
    let params = load_params(&cfg)?;
    let ctx = Context::new(cfg)?;
    let cfg = &ctx.cfg;
    let alpha = cfg.alpha.unwrap_or(cfg.rollout.focus.floor_scale);
    let points = harness::sweep_k(&ctx, Some(&params), alpha, &cfg.k_grid)?;
    let doc = SweepDoc {
        schema: SWEEP_SCHEMA,
        config: cfg,
        parameter: "k",
        alpha: Some(alpha),
        points: &points,
        selected: None,
    };
    write_text(cfg, "k_sweep.json", &report::to_json_pretty(&doc)?)?;
    write_text(cfg, "k_sweep.csv", &report::sweep_csv("k", &points))?;
    print!("{}", report::sweep_text("k", &points, None));
    Ok(())
}

pub fn cmd_bench_overhead(cfg: RunConfig) -> Result<(), AppError> {
    // Cost does not depend on parameter values; fall back to an untrained set.
    let params = if cfg.checkpoint_path().exists() {
        load_params(&cfg)?
    } else {
        ParamSet::init(cfg.head_dims(), cfg.init_seed)
    };
    let ctx = Context::new(cfg)?;
    let r = bench::run(&ctx, &params)?;
    write_text(&ctx.cfg, "bench.json", &report::to_json_pretty(&r)?)?;
    print!("{}", bench::render(&r));
    Ok(())
}

pub fn cmd_serve(cfg: RunConfig) -> Result<(), AppError> {
    let params = if cfg.checkpoint_path().exists() {
        Some(load_params(&cfg)?)
    } else {
        eprintln!(
            "no checkpoint at {}; only full_prompt and naive sessions are available",
            cfg.checkpoint_path().display()
        );
        None
    };
    let listen = cfg.listen.clone();
    let gw = Arc::new(gateway::Gateway::new(cfg, params)?);
    let server = gateway::Server::bind(listen.as_str(), gw)?;
    println!("listening on {}", server.local_addr()?);
    server.run()
}
