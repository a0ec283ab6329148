//! Episode rollouts under the full-prompt, naive and gated protocols.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::emulator::{BackboneEmulation, SceneFrame};
use super::policy::{base_attention, policy_step, PolicyConfig, PolicyState};
use super::scene::{Scene, VIEWS};
use crate::focus::{average_views, injection_weights, split_views, FocusConfig, FocusMap, StreamingFocus};
use crate::numerics::{l2_normalize_rows, ParamSet, Tensor2D};
use crate::readiness::{readiness_score, ReadinessConfig, ReadinessState};
use crate::streaming::{prefix_at_step, steps_to_seconds, TypingSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FullPrompt,
    Naive,
    Premover,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::FullPrompt, Protocol::Naive, Protocol::Premover];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::FullPrompt => "full_prompt",
            Protocol::Naive => "naive",
            Protocol::Premover => "premover",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full_prompt" | "full" => Ok(Protocol::FullPrompt),
            "naive" => Ok(Protocol::Naive),
            "premover" => Ok(Protocol::Premover),
            other => Err(Error::Config(alloc::format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RolloutConfig {
    pub focus: FocusConfig,
    pub readiness: ReadinessConfig,
    pub schedule: TypingSchedule,
    pub policy: PolicyConfig,
    /// Replaces the learned threshold when set.
    pub tau_override: Option<f64>,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        self.focus.validate()?;
        self.readiness.validate(self.focus.patches_per_view)?;
        self.schedule.validate()
    }

    pub fn budget(&self, instruction_len: usize) -> usize {
        self.schedule.completion_step(instruction_len) + self.policy.slack
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Success,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub prefix_len: usize,
    pub r: Option<f64>,
    pub committed: bool,
    pub effector: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub suite: String,
    pub task: usize,
    pub episode: usize,
    pub protocol: Protocol,
    pub alpha: f64,
    pub success: bool,
    pub total_steps: usize,
    pub commit_step: Option<usize>,
    pub wall_seconds: f64,
    /// Only filled by timing runs; deterministic rollouts leave it empty.
    pub focus_head_ms_per_step: Option<f64>,
    pub wrong_entries: usize,
    pub trace: Vec<TraceStep>,
}

/// What one control step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub prefix_len: usize,
    /// Concatenated per-view map, when one exists.
    pub focus: Option<FocusMap>,
    pub readiness: ReadinessState,
    pub effector: (usize, usize),
    pub status: Status,
}

fn project_row(head: &crate::numerics::MlpHead, row: &[f64]) -> Result<Vec<f64>> {
    let x = Tensor2D::from_vec(1, row.len(), row.to_vec())?;
    Ok(l2_normalize_rows(&head.apply(&x)?).into_data())
}

/// Step-by-step episode driver shared by batch rollouts and live sessions.
pub struct EpisodeRunner<'a> {
    scene: Scene,
    emu: &'a BackboneEmulation,
    params: Option<&'a ParamSet>,
    frame: SceneFrame,
    protocol: Protocol,
    alpha: f64,
    cfg: RolloutConfig,
    compute_maps: bool,
    policy: PolicyState,
    readiness: ReadinessState,
    streaming: Option<StreamingFocus>,
    tokens: Vec<String>,
    effector_patches: [usize; VIEWS],
    current: Option<FocusMap>,
    previous_avg: Option<FocusMap>,
    attention: Option<Vec<f64>>,
    step: usize,
    status: Status,
}

impl<'a> EpisodeRunner<'a> {
    /// `params` is required for the gated protocol; with other protocols it
    /// only feeds the displayed map.
    pub fn new(
        scene: Scene,
        emu: &'a BackboneEmulation,
        params: Option<&'a ParamSet>,
        protocol: Protocol,
        alpha: f64,
        cfg: RolloutConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(alloc::format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if scene.patches_per_view() != cfg.focus.patches_per_view || cfg.focus.views != VIEWS {
            return Err(Error::Config("focus config does not match the scene lattice".into()));
        }
        if protocol == Protocol::Premover && params.is_none() {
            return Err(Error::Config("the gated protocol needs trained parameters".into()));
        }
        if let Some(p) = params {
            if p.dims().d != emu.d() {
                return Err(Error::Config("head input width does not match the emulator".into()));
            }
        }
        let tau = cfg.tau_override.or(params.map(|p| p.tau)).unwrap_or(f64::INFINITY);
        let frame = emu.frame(&scene);
        let policy = PolicyState::new(&scene);
        let effector_patches = [scene.effector_patch(0), scene.effector_patch(1)];
        let compute_maps = protocol == Protocol::Premover;
        let mut runner = Self {
            scene,
            emu,
            params,
            frame,
            protocol,
            alpha,
            cfg,
            compute_maps,
            policy,
            readiness: ReadinessState::new(tau),
            streaming: None,
            tokens: Vec::new(),
            effector_patches,
            current: None,
            previous_avg: None,
            attention: None,
            step: 0,
            status: Status::Running,
        };
        if runner.protocol == Protocol::Naive {
            runner.readiness = runner.readiness.force_commit(0);
        }
        Ok(runner)
    }

    /// Also compute maps under protocols that ignore them.
    pub fn with_display_maps(mut self) -> Self {
        self.compute_maps = self.params.is_some();
        self
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn readiness(&self) -> &ReadinessState {
        &self.readiness
    }

    pub fn policy(&self) -> &PolicyState {
        &self.policy
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn ensure_streaming(&mut self) -> Result<()> {
        if self.streaming.is_some() {
            return Ok(());
        }
        let params = self.params.expect("maps need parameters");
        let n_v = self.scene.patches_per_view();
        let d = self.emu.d();
        let mut h = Tensor2D::zeros(VIEWS * n_v, d);
        for v in 0..VIEWS {
            let hv = self.frame.h_img(v, self.effector_patches[v]);
            h.data_mut()[v * n_v * d..(v + 1) * n_v * d].copy_from_slice(hv.data());
        }
        let z = l2_normalize_rows(&params.img_head.apply(&h)?);
        self.streaming = Some(StreamingFocus::new(z));
        Ok(())
    }

    fn refresh_effector_rows(&mut self) -> Result<()> {
        let new = [self.scene.effector_patch(0), self.scene.effector_patch(1)];
        if new == self.effector_patches {
            return Ok(());
        }
        let old = self.effector_patches;
        self.effector_patches = new;
        let Some(sf) = self.streaming.as_mut() else {
            return Ok(());
        };
        let params = self.params.expect("maps need parameters");
        let n_v = self.scene.patches_per_view();
        for v in 0..VIEWS {
            for p in [old[v], new[v]] {
                let row = self.frame.img_row(v, p, new[v]);
                sf.replace_patch(v * n_v + p, &project_row(&params.img_head, &row)?)?;
            }
        }
        self.current = None;
        Ok(())
    }

    /// Run one control step with the currently visible prefix. `complete`
    /// tells the full-prompt protocol the instruction is finished.
    pub fn step<S: AsRef<str>>(&mut self, prefix: &[S], complete: bool) -> Result<StepInfo> {
        if self.status != Status::Running {
            return Err(Error::Config("episode already finished".into()));
        }
        let t = self.step;
        if prefix.len() < self.tokens.len() || prefix.iter().zip(&self.tokens).any(|(a, b)| a.as_ref() != b) {
            return Err(Error::Config("prefix may only grow".into()));
        }
        let grew = prefix.len() > self.tokens.len();

        if self.compute_maps && !prefix.is_empty() {
            self.ensure_streaming()?;
            let params = self.params.expect("maps need parameters");
            for j in self.tokens.len()..prefix.len() {
                let row = self.emu.lang_row(self.scene.rng_seed, prefix, j);
                let z = project_row(&params.lang_head, &row)?;
                self.streaming.as_mut().expect("initialized").push_token(&z)?;
            }
            if grew {
                self.current = None;
            }
        }
        if grew {
            self.tokens = prefix.iter().map(|w| String::from(w.as_ref())).collect();
            self.attention = None;
        }

        let mut avg: Option<FocusMap> = None;
        if let Some(sf) = &self.streaming {
            if sf.tokens() > 0 {
                if self.current.is_none() {
                    self.current = Some(sf.map(self.cfg.focus.logit_scale, t)?);
                }
                let cur = self.current.as_mut().expect("just set");
                cur.source_step = t;
                let a = average_views(&split_views(cur, VIEWS)?)?;
                let r = readiness_score(&a.p, self.cfg.readiness.k)?;
                if self.protocol == Protocol::Premover {
                    self.readiness = self.readiness.gate(r, t);
                } else {
                    self.readiness.r = Some(r);
                }
                avg = Some(a);
            }
        }
        if self.protocol == Protocol::FullPrompt && complete {
            self.readiness = self.readiness.force_commit(t);
        }

        if self.readiness.committed && !self.tokens.is_empty() {
            let n_v = self.scene.patches_per_view();
            let w = match (&self.previous_avg, self.protocol) {
                (Some(prev), Protocol::Premover) => injection_weights(&prev.p, self.alpha),
                _ => vec![1.0; n_v],
            };
            if self.attention.is_none() {
                self.attention = Some(base_attention(
                    &self.scene,
                    &self.tokens,
                    &self.frame.attention_noise,
                    &self.policy.sticky,
                    &self.emu.cfg,
                    &self.cfg.policy,
                ));
            }
            let entries = self.policy.wrong_entries;
            let attention = self.attention.as_ref().expect("just set");
            policy_step(&self.scene, &mut self.policy, attention, &w, &self.cfg.policy);
            if self.policy.wrong_entries != entries {
                self.attention = None;
            }
            self.scene.effector = self.policy.effector;
            self.refresh_effector_rows()?;
        }
        self.previous_avg = avg;

        if self.policy.dwell >= self.cfg.policy.dwell {
            self.status = Status::Success;
        }
        self.step += 1;
        Ok(StepInfo {
            step: t,
            prefix_len: self.tokens.len(),
            focus: self.current.clone(),
            readiness: self.readiness,
            effector: self.policy.effector,
            status: self.status,
        })
    }

    /// Mark the episode as out of budget.
    pub fn time_out(&mut self) {
        if self.status == Status::Running {
            self.status = Status::Timeout;
        }
    }
}

/// Run one episode on the fixed typing schedule.
pub fn rollout(
    scene: &Scene,
    emu: &BackboneEmulation,
    protocol: Protocol,
    params: Option<&ParamSet>,
    alpha: f64,
    cfg: &RolloutConfig,
) -> Result<EpisodeReport> {
    let budget = cfg.budget(scene.instruction.len());
    let mut runner = EpisodeRunner::new(scene.clone(), emu, params, protocol, alpha, *cfg)?;
    let mut trace = Vec::with_capacity(budget);
    let mut total = budget;
    for t in 0..budget {
        let prefix = prefix_at_step(&scene.instruction, t, &cfg.schedule);
        let info = runner.step(&prefix.tokens, prefix.is_complete())?;
        trace.push(TraceStep {
            prefix_len: info.prefix_len,
            r: info.readiness.r,
            committed: info.readiness.committed,
            effector: info.effector,
        });
        if info.status == Status::Success {
            total = t + 1;
            break;
        }
    }
    runner.time_out();
    let success = runner.status() == Status::Success;
    Ok(EpisodeReport {
        suite: String::from(scene.suite.name()),
        task: scene.task,
        episode: scene.episode,
        protocol,
        alpha,
        success,
        total_steps: total,
        commit_step: runner.readiness().commit_step,
        wall_seconds: steps_to_seconds(total, cfg.schedule.control_hz),
        focus_head_ms_per_step: None,
        wrong_entries: runner.policy().wrong_entries,
        trace,
    })
}
