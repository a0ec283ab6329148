//! Run configuration: one JSON document, overridable by flags.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use premover_core::numerics::HeadDims;
use premover_core::simworld::{
    EmulatorConfig, Protocol, RolloutConfig, SuiteKind, DEFAULT_GRID, TASKS_PER_SUITE, VIEWS,
};
use premover_core::training::TrainConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::AppError;

pub const SEED_ENV: &str = "PREMOVER_SEED";

/// Half-open episode range written `A..B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeRange {
    pub start: usize,
    pub end: usize,
}

impl EpisodeRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn range(self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    fn overlaps(self, other: EpisodeRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for EpisodeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for EpisodeRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("episode range '{s}' must look like A..B"))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad episode bound '{x}': {e}"))
        };
        let r = EpisodeRange::new(parse(a)?, parse(b)?);
        if r.is_empty() {
            return Err(format!("episode range '{s}' is empty"));
        }
        Ok(r)
    }
}

impl Serialize for EpisodeRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EpisodeRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// An evaluated setting: a protocol plus the α it runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    FullPrompt,
    Naive,
    Premover,
    /// The gated protocol with injection disabled (α = 1).
    GateOnly,
}

impl Setting {
    pub const DEFAULT: [Setting; 4] = [
        Setting::FullPrompt,
        Setting::Naive,
        Setting::Premover,
        Setting::GateOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::FullPrompt => "full_prompt",
            Setting::Naive => "naive",
            Setting::Premover => "premover",
            Setting::GateOnly => "gate_only",
        }
    }

    pub fn protocol(self) -> Protocol {
        match self {
            Setting::FullPrompt => Protocol::FullPrompt,
            Setting::Naive => Protocol::Naive,
            Setting::Premover | Setting::GateOnly => Protocol::Premover,
        }
    }

    /// α used by this setting given the calibrated one.
    pub fn alpha(self, calibrated: f64) -> f64 {
        match self {
            Setting::GateOnly => 1.0,
            _ => calibrated,
        }
    }

    pub fn needs_alpha(self) -> bool {
        self == Setting::Premover
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gate_only" | "gate" => Ok(Setting::GateOnly),
            other => match Protocol::parse(other) {
                Ok(Protocol::FullPrompt) => Ok(Setting::FullPrompt),
                Ok(Protocol::Naive) => Ok(Setting::Naive),
                Ok(Protocol::Premover) => Ok(Setting::Premover),
                Err(e) => Err(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark_seed: u64,
    pub suites: Vec<SuiteKind>,
    pub tasks_per_suite: usize,
    pub grid: usize,
    pub train_episodes: EpisodeRange,
    pub calibration_episodes: EpisodeRange,
    pub eval_episodes: EpisodeRange,
    pub settings: Vec<Setting>,
    /// Fixed α; calibrated on the calibration split when absent.
    pub alpha: Option<f64>,
    pub alpha_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub hidden: usize,
    pub d_proj: usize,
    pub init_seed: u64,
    /// Demonstration frames kept: every `stride`-th step.
    pub stride: usize,
    pub emulator: EmulatorConfig,
    pub rollout: RolloutConfig,
    pub train: TrainConfig,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub bench_iterations: usize,
    pub bench_warmup: usize,
    pub listen: String,
    /// Tick cap for a live session.
    pub session_max_ticks: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark_seed: 0,
            suites: SuiteKind::ALL.to_vec(),
            tasks_per_suite: TASKS_PER_SUITE,
            grid: DEFAULT_GRID,
            train_episodes: EpisodeRange::new(0, 10),
            calibration_episodes: EpisodeRange::new(10, 15),
            eval_episodes: EpisodeRange::new(15, 50),
            settings: Setting::DEFAULT.to_vec(),
            alpha: None,
            alpha_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            k_grid: vec![1, 5, 10, 20, 50, 100, 256],
            hidden: 32,
            d_proj: 32,
            init_seed: 0,
            stride: 4,
            emulator: EmulatorConfig::default(),
            rollout: RolloutConfig::default(),
            train: TrainConfig::default(),
            workers: 0,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            bench_iterations: 1000,
            bench_warmup: 100,
            listen: "127.0.0.1:7878".into(),
            session_max_ticks: 4000,
        }
    }
}

impl RunConfig {
    /// Parse a config document. A seed in the file wins over `PREMOVER_SEED`.
    pub fn from_json(text: &str, env_seed: Option<u64>) -> Result<Self, AppError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| AppError::Config(format!("config is not valid JSON: {e}")))?;
        let has_seed = value.get("benchmark_seed").is_some();
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| AppError::Config(format!("config: {e}")))?;
        if let (false, Some(s)) = (has_seed, env_seed) {
            cfg.benchmark_seed = s;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, env_seed: Option<u64>) -> Result<Self, AppError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| AppError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text, env_seed)
            }
            None => Self::from_json("{}", env_seed),
        }
    }

    pub fn env_seed() -> Result<Option<u64>, AppError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| AppError::Config(format!("{SEED_ENV}='{v}' is not a u64: {e}"))),
            Err(_) => Ok(None),
        }
    }

    pub fn head_dims(&self) -> HeadDims {
        HeadDims {
            d: self.emulator.d,
            h: self.hidden,
            d_proj: self.d_proj,
        }
    }

    pub fn patches_per_view(&self) -> usize {
        self.grid * self.grid
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |m: String| Err(AppError::Config(m));
        if self.suites.is_empty() {
            return bad("at least one suite is required".into());
        }
        if self.tasks_per_suite == 0 || self.tasks_per_suite > TASKS_PER_SUITE {
            return bad(format!("tasks_per_suite must lie in 1..={TASKS_PER_SUITE}"));
        }
        if self.settings.is_empty() {
            return bad("at least one protocol is required".into());
        }
        let splits = [
            ("train", self.train_episodes),
            ("calibration", self.calibration_episodes),
            ("eval", self.eval_episodes),
        ];
        for (i, (a, ra)) in splits.iter().enumerate() {
            for (b, rb) in &splits[i + 1..] {
                if ra.overlaps(*rb) {
                    return bad(format!("{a} episodes {ra} overlap {b} episodes {rb}"));
                }
            }
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha must lie in [0, 1], got {a}"));
            }
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alpha grid must be a non-empty subset of [0, 1]".into());
        }
        let n = self.patches_per_view();
        if self.k_grid.is_empty() || self.k_grid.iter().any(|&k| k == 0 || k > n) {
            return bad(format!("K grid values must lie in 1..={n}"));
        }
        if self.hidden == 0 || self.d_proj == 0 || self.stride == 0 {
            return bad("hidden, d_proj and stride must be positive".into());
        }
        if self.rollout.focus.patches_per_view != n || self.rollout.focus.views != VIEWS {
            return bad(format!(
                "focus lattice {}x{} does not match grid {}",
                self.rollout.focus.views, self.rollout.focus.patches_per_view, self.grid
            ));
        }
        if self.bench_iterations == 0 {
            return bad("bench_iterations must be positive".into());
        }
        self.emulator.validate().map_err(AppError::from)?;
        self.rollout.validate().map_err(AppError::from)?;
        self.train.validate().map_err(AppError::from)?;
        if self.train.loss.k > n {
            return bad(format!("training K must be at most {n}"));
        }
        Ok(())
    }
}
