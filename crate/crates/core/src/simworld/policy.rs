//! Toy action policy: frozen-backbone attention, one lattice move per step,
//! and a commitment penalty for reaching the wrong object.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::emulator::EmulatorConfig;
use super::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Attention bonus an object keeps after the effector has entered it.
    pub commit_bias: f64,
    /// Steps the effector stays frozen after entering a wrong object (R).
    pub freeze_steps: usize,
    /// Injected weight below which an obstacle patch is not perceived.
    pub visibility: f64,
    /// Consecutive steps on the target needed for success.
    pub dwell: usize,
    /// Steps allowed beyond the end of typing.
    pub slack: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            commit_bias: 0.3,
            freeze_steps: 25,
            visibility: 0.1,
            dwell: 2,
            slack: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub effector: (usize, usize),
    pub frozen: usize,
    /// Objects the effector has entered by mistake.
    pub sticky: Vec<bool>,
    /// Object the effector currently stands on.
    pub inside: Option<usize>,
    pub dwell: usize,
    pub wrong_entries: usize,
}

impl PolicyState {
    pub fn new(scene: &Scene) -> Self {
        let start = scene.effector;
        Self {
            effector: start,
            frozen: 0,
            sticky: vec![false; scene.objects.len()],
            inside: scene.object_at(scene.patch(start.0, start.1)),
            dwell: 0,
            wrong_entries: 0,
        }
    }
}

/// Fraction of `name` words present in `prefix`.
fn name_overlap<S: AsRef<str>>(name: &[alloc::string::String], prefix: &[S]) -> f64 {
    if name.is_empty() {
        return 0.0;
    }
    let hits = name
        .iter()
        .filter(|w| {
            prefix
                .iter()
                .any(|p| crate::readiness::normalize_word(p.as_ref()) == **w)
        })
        .count();
    hits as f64 / name.len() as f64
}

/// Softmax over view-0 patches of word overlap, leak toward non-target
/// objects, the sticky bonus and static background noise.
pub fn base_attention<S: AsRef<str>>(
    scene: &Scene,
    prefix: &[S],
    noise: &[f64],
    sticky: &[bool],
    emu: &EmulatorConfig,
    policy: &PolicyConfig,
) -> Vec<f64> {
    let n = scene.patches_per_view();
    let mut score = vec![0.0; n];
    for r in &scene.regions {
        let named = prefix
            .iter()
            .any(|p| crate::readiness::normalize_word(p.as_ref()) == r.word);
        if named {
            for &p in &r.footprint[0] {
                score[p] = emu.goal_weight;
            }
        }
    }
    for (oi, o) in scene.objects.iter().enumerate() {
        let mut s = name_overlap(&o.name, prefix);
        if !o.is_target {
            s += emu.distractor_leak * o.salience;
        }
        if sticky.get(oi).copied().unwrap_or(false) {
            s += policy.commit_bias;
        }
        for &p in &o.footprint[0] {
            score[p] = s;
        }
    }
    let logits: Vec<f64> = score
        .iter()
        .zip(noise)
        .map(|(s, eta)| emu.attention_gain * (s + emu.background_sigma * eta))
        .collect();
    softmax(&logits)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| libm::exp(v - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `normalize(attention ⊙ w)`.
pub fn effective_attention(attention: &[f64], w: &[f64]) -> Vec<f64> {
    let prod: Vec<f64> = attention.iter().zip(w).map(|(a, b)| a * b).collect();
    let z: f64 = prod.iter().sum();
    if z > 0.0 {
        prod.into_iter().map(|v| v / z).collect()
    } else {
        prod
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

const NEIGHBORS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// First move on a shortest 8-neighbour path from `from` to `goal` that
/// avoids `blocked`; greedy step when the goal is unreachable.
pub fn plan_step(grid: usize, from: usize, goal: usize, blocked: &[bool]) -> usize {
    if from == goal {
        return from;
    }
    let g = grid as i64;
    let mut parent = vec![usize::MAX; grid * grid];
    parent[from] = from;
    let mut queue = VecDeque::new();
    queue.push_back(from);
    while let Some(p) = queue.pop_front() {
        if p == goal {
            break;
        }
        let (x, y) = ((p % grid) as i64, (p / grid) as i64);
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= g || ny >= g {
                continue;
            }
            let q = (ny * g + nx) as usize;
            if parent[q] != usize::MAX || (blocked[q] && q != goal) {
                continue;
            }
            parent[q] = p;
            queue.push_back(q);
        }
    }
    if parent[goal] == usize::MAX {
        let (x, y) = ((from % grid) as i64, (from / grid) as i64);
        let (gx, gy) = ((goal % grid) as i64, (goal / grid) as i64);
        let nx = x + (gx - x).signum();
        let ny = y + (gy - y).signum();
        return (ny * g + nx) as usize;
    }
    let mut step = goal;
    while parent[step] != from {
        step = parent[step];
    }
    step
}

/// One control step. Returns `true` when the effector moved.
pub fn policy_step(scene: &Scene, state: &mut PolicyState, attention: &[f64], w: &[f64], cfg: &PolicyConfig) -> bool {
    let grid = scene.grid;
    let here = scene.patch(state.effector.0, state.effector.1);
    let mut moved = false;
    if state.frozen > 0 {
        state.frozen -= 1;
    } else {
        let eff = effective_attention(attention, w);
        let goal = argmax(&eff);
        let goal_obj = scene.object_at(goal);
        let mut blocked = vec![false; grid * grid];
        for (oi, o) in scene.objects.iter().enumerate() {
            if Some(oi) == goal_obj {
                continue;
            }
            for &p in &o.footprint[0] {
                blocked[p] = w[p] >= cfg.visibility;
            }
        }
        let next = plan_step(grid, here, goal, &blocked);
        if next != here {
            state.effector = scene.coords(next);
            moved = true;
        }
    }

    let now = scene.patch(state.effector.0, state.effector.1);
    let inside = scene.object_at(now);
    if let Some(oi) = inside {
        if state.inside != Some(oi) && !scene.objects[oi].is_target {
            state.frozen = cfg.freeze_steps;
            state.sticky[oi] = true;
            state.wrong_entries += 1;
        }
    }
    state.inside = inside;
    let on_target = inside.map(|oi| scene.objects[oi].is_target).unwrap_or(false);
    state.dwell = if on_target { state.dwell + 1 } else { 0 };
    moved
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::scene::generate_scene;
    use crate::simworld::suite::{task_spec, SuiteKind};

    fn scene() -> Scene {
        generate_scene(0, &task_spec(0, SuiteKind::Spatial, 0), 0, 16).unwrap()
    }

    #[test]
    fn adjacent_goal_reached_in_one_step() {
        let blocked = vec![false; 256];
        assert_eq!(plan_step(16, 17, 34, &blocked), 34);
        assert_eq!(plan_step(16, 17, 17, &blocked), 17);
    }

    #[test]
    fn path_goes_around_walls() {
        let mut blocked = vec![false; 256];
        for y in 0..15 {
            blocked[y * 16 + 5] = true;
        }
        let mut p = 16 * 2 + 2;
        let goal = 16 * 2 + 8;
        let mut steps = 0;
        while p != goal {
            p = plan_step(16, p, goal, &blocked);
            assert!(!blocked[p]);
            steps += 1;
            assert!(steps < 40);
        }
        assert!(steps > 6);
    }

    #[test]
    fn unreachable_goal_falls_back_to_greedy() {
        let mut blocked = vec![false; 256];
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx != 0 || dy != 0 {
                    blocked[((5 + dy) * 16 + 5 + dx) as usize] = true;
                }
            }
        }
        assert_eq!(plan_step(16, 0, 5 * 16 + 5, &blocked), 17);
    }

    #[test]
    fn muted_distractors_are_never_the_goal() {
        let s = scene();
        let emu = EmulatorConfig {
            distractor_leak: 5.0,
            ..EmulatorConfig::default()
        };
        let noise = vec![0.0; 256];
        let att = base_attention(
            &s,
            &s.instruction,
            &noise,
            &vec![false; s.objects.len()],
            &emu,
            &PolicyConfig::default(),
        );
        let mut w = vec![1.0; 256];
        for o in s.objects.iter().filter(|o| !o.is_target) {
            for &p in &o.footprint[0] {
                w[p] = 0.0;
            }
        }
        let goal = argmax(&effective_attention(&att, &w));
        assert!(s.objects[s.object_at(goal).unwrap()].is_target);
        let goal_raw = argmax(&att);
        assert!(!s.objects[s.object_at(goal_raw).unwrap()].is_target);
    }

    #[test]
    fn full_instruction_without_leak_points_at_target() {
        let s = scene();
        let emu = EmulatorConfig {
            distractor_leak: 0.0,
            background_sigma: 0.0,
            ..EmulatorConfig::default()
        };
        let att = base_attention(
            &s,
            &s.instruction,
            &[0.0; 256],
            &vec![false; s.objects.len()],
            &emu,
            &PolicyConfig::default(),
        );
        assert!(s.objects[s.object_at(argmax(&att)).unwrap()].is_target);
    }

    #[test]
    fn empty_scene_attention_is_flat() {
        let mut s = scene();
        s.objects.clear();
        s.regions.clear();
        let mut rng = crate::rng::SeededRng::new(3);
        let noise: Vec<f64> = (0..256).map(|_| rng.gaussian()).collect();
        let emu = EmulatorConfig::default();
        let att = base_attention(&s, &s.instruction, &noise, &[], &emu, &PolicyConfig::default());
        let max = att.iter().copied().fold(f64::MIN, f64::max);
        let min = att.iter().copied().fold(f64::MAX, f64::min);
        // Only the background noise separates patches.
        let spread = noise.iter().copied().fold(f64::MIN, f64::max) - noise.iter().copied().fold(f64::MAX, f64::min);
        let expected = emu.attention_gain * emu.background_sigma * spread;
        assert!((libm::log(max / min) - expected).abs() < 1e-9);
    }

    #[test]
    fn wrong_entry_freezes_for_r_steps() {
        let s = scene();
        let d = s.objects.iter().position(|o| !o.is_target).unwrap();
        let goal = s.objects[d].footprint[0][0];
        let mut st = PolicyState::new(&s);
        let (gx, gy) = s.coords(goal);
        // Stand next to the distractor.
        let start = (0..256)
            .find(|&p| {
                let (x, y) = s.coords(p);
                x.abs_diff(gx) <= 1 && y.abs_diff(gy) <= 1 && s.object_at(p).is_none()
            })
            .unwrap();
        st.effector = s.coords(start);
        st.inside = None;
        let mut att = vec![0.0; 256];
        att[goal] = 1.0;
        let w = vec![1.0; 256];
        let cfg = PolicyConfig::default();
        assert!(policy_step(&s, &mut st, &att, &w, &cfg));
        assert_eq!(st.frozen, cfg.freeze_steps);
        assert!(st.sticky[d]);
        let mut frozen_steps = 0;
        let mut other = vec![0.0; 256];
        other[start] = 1.0;
        while !policy_step(&s, &mut st, &other, &w, &cfg) {
            frozen_steps += 1;
            assert!(frozen_steps <= cfg.freeze_steps);
        }
        assert_eq!(frozen_steps, cfg.freeze_steps);
    }
}
