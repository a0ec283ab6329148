use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use crate::focus::TargetMask;
use crate::numerics::Tensor2D;
use crate::readiness::readiness_label;
use crate::rng::ContentHasher;
use crate::simworld::policy::plan_step;
use crate::simworld::{generate_scene, task_spec, BackboneEmulation, Scene, SuiteKind, VIEWS};
use crate::streaming::training_prefix_lengths;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameId {
    pub suite: SuiteKind,
    pub task: usize,
    pub episode: usize,
    pub frame: usize,
}

/// One supervised example: a frame's image states and one prefix.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: FrameId,
    /// Views stacked row-wise: `VIEWS · N_v` rows.
    pub h_img: Arc<Tensor2D>,
    pub h_lang: Tensor2D,
    pub y: bool,
    pub m_star: Option<TargetMask>,
}

/// Samples grouped by frame so image states are projected once per frame.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub groups: Vec<Vec<TrainSample>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> usize {
        self.groups.len()
    }

    pub fn samples(&self) -> impl Iterator<Item = &TrainSample> {
        self.groups.iter().flatten()
    }

    pub fn content_hash(&self) -> u64 {
        let mut h = ContentHasher::default();
        for s in self.samples() {
            h.write_u64(s.id.suite.index());
            h.write_u64(s.id.task as u64);
            h.write_u64(s.id.episode as u64);
            h.write_u64(s.id.frame as u64);
            h.write_f64s(s.h_img.data());
            h.write_f64s(s.h_lang.data());
            h.write_u64(s.y as u64);
            if let Some(m) = &s.m_star {
                for &b in &m.m_star {
                    h.write_u64(b as u64);
                }
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub benchmark_seed: u64,
    pub suites: Vec<SuiteKind>,
    pub tasks: Range<usize>,
    pub episodes: Range<usize>,
    pub grid: usize,
    /// Sample every `stride`-th step of a demonstration.
    pub stride: usize,
}

/// Scripted demonstration: straight to the nearest target patch, then one
/// more step on it.
pub fn demonstration(scene: &Scene) -> Vec<(usize, usize)> {
    let grid = scene.grid;
    let free = alloc::vec![false; grid * grid];
    let start = scene.patch(scene.effector.0, scene.effector.1);
    let cheb = |p: usize| {
        let (x, y) = scene.coords(p);
        x.abs_diff(scene.effector.0).max(y.abs_diff(scene.effector.1))
    };
    let goal = *scene.target().footprint[0]
        .iter()
        .min_by_key(|&&p| (cheb(p), p))
        .expect("target has patches");
    let mut path = alloc::vec![scene.effector];
    let mut at = start;
    while at != goal {
        at = plan_step(grid, at, goal, &free);
        path.push(scene.coords(at));
    }
    path.push(scene.coords(goal));
    path
}

fn stacked_views(frame: &crate::simworld::SceneFrame, scene: &Scene) -> Tensor2D {
    let n_v = scene.patches_per_view();
    let h0 = frame.h_img(0, scene.effector_patch(0));
    let h1 = frame.h_img(1, scene.effector_patch(1));
    let mut data = h0.into_data();
    data.extend_from_slice(h1.data());
    Tensor2D::from_vec(VIEWS * n_v, data.len() / (VIEWS * n_v), data).expect("stacked shape")
}

/// Samples for one episode: every `stride`-th demonstration frame × the
/// training prefixes of its instruction.
pub fn episode_samples(
    emu: &BackboneEmulation,
    benchmark_seed: u64,
    suite: SuiteKind,
    task: usize,
    episode: usize,
    grid: usize,
    stride: usize,
) -> Result<Vec<Vec<TrainSample>>> {
    let spec = task_spec(benchmark_seed, suite, task);
    let mut scene = generate_scene(benchmark_seed, &spec, episode, grid)?;
    let target: String = scene.target_name();
    let frame = emu.frame(&scene);
    let full_lang = emu.h_lang(scene.rng_seed, &scene.instruction);
    let mask = scene.target_mask();
    let lengths = training_prefix_lengths(scene.instruction.len());

    let mut groups = Vec::new();
    for (fi, &pos) in demonstration(&scene).iter().enumerate().step_by(stride.max(1)) {
        scene.effector = pos;
        let h_img = Arc::new(stacked_views(&frame, &scene));
        let mut group = Vec::with_capacity(lengths.len());
        for &k in &lengths {
            let y = readiness_label(&scene.instruction[..k], &target)?;
            group.push(TrainSample {
                id: FrameId {
                    suite,
                    task,
                    episode,
                    frame: fi,
                },
                h_img: Arc::clone(&h_img),
                h_lang: full_lang.head_rows(k),
                y,
                m_star: if y { Some(mask.clone()) } else { None },
            });
        }
        groups.push(group);
    }
    Ok(groups)
}

pub fn build_dataset(emu: &BackboneEmulation, spec: &DatasetSpec) -> Result<Dataset> {
    if spec.suites.is_empty() || spec.tasks.is_empty() || spec.episodes.is_empty() {
        return Err(Error::Config(
            "dataset needs at least one suite, task and episode".into(),
        ));
    }
    let mut groups = Vec::new();
    for &suite in &spec.suites {
        for task in spec.tasks.clone() {
            for episode in spec.episodes.clone() {
                groups.extend(episode_samples(
                    emu,
                    spec.benchmark_seed,
                    suite,
                    task,
                    episode,
                    spec.grid,
                    spec.stride,
                )?);
            }
        }
    }
    Ok(Dataset { groups })
}
