//! Desk-scale synthetic world: task suites, scene layout, the frozen backbone
//! emulator, a toy policy and protocol rollouts.

pub mod emulator;
pub mod policy;
pub mod rollout;
pub mod scene;
pub mod suite;

pub use emulator::{BackboneEmulation, EmulatorConfig, HiddenStates, SceneFrame};
pub use policy::{base_attention, policy_step, PolicyConfig, PolicyState};
pub use rollout::{rollout, EpisodeReport, EpisodeRunner, Protocol, RolloutConfig, Status, StepInfo, TraceStep};
pub use scene::{episode_seed, generate_scene, Region, Scene, SceneObject, VIEWS};
pub use suite::{task_spec, ObjectKind, SuiteKind, TaskSpec, TASKS_PER_SUITE};

use crate::Result;

pub const DEFAULT_GRID: usize = 16;

/// Scene for one episode of one task.
pub fn episode_scene(benchmark_seed: u64, suite: SuiteKind, task: usize, episode: usize, grid: usize) -> Result<Scene> {
    generate_scene(benchmark_seed, &task_spec(benchmark_seed, suite, task), episode, grid)
}
