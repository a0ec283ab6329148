use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::suite::{task_spec, ObjectKind, SuiteKind, TaskSpec, REGIONS};
use crate::focus::TargetMask;
use crate::rng::{derive_seed, SeededRng};
use crate::{Error, Result};

pub const VIEWS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub name: Vec<String>,
    pub class_id: usize,
    /// Sorted patch indices per view.
    pub footprint: [Vec<usize>; VIEWS],
    pub is_target: bool,
    pub salience: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region: usize,
    pub word: String,
    pub footprint: [Vec<usize>; VIEWS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub benchmark_seed: u64,
    pub suite: SuiteKind,
    pub task: usize,
    pub episode: usize,
    pub grid: usize,
    pub objects: Vec<SceneObject>,
    pub regions: Vec<Region>,
    /// View-0 footprint of the first region the instruction names.
    pub goal_region: Option<Vec<usize>>,
    /// Effector lattice position `(x, y)` in view 0.
    pub effector: (usize, usize),
    /// View-1 offset applied to the effector.
    pub view_offset: (i64, i64),
    pub instruction: Vec<String>,
    pub rng_seed: u64,
}

impl Scene {
    pub fn patches_per_view(&self) -> usize {
        self.grid * self.grid
    }

    pub fn target(&self) -> &SceneObject {
        self.objects.iter().find(|o| o.is_target).expect("scene has a target")
    }

    pub fn target_index(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.is_target)
            .expect("scene has a target")
    }

    pub fn target_name(&self) -> String {
        self.target().name.join(" ")
    }

    pub fn patch(&self, x: usize, y: usize) -> usize {
        y * self.grid + x
    }

    pub fn coords(&self, patch: usize) -> (usize, usize) {
        (patch % self.grid, patch / self.grid)
    }

    /// Effector patch in `view`.
    pub fn effector_patch(&self, view: usize) -> usize {
        let (x, y) = self.effector;
        if view == 0 {
            return self.patch(x, y);
        }
        let (ox, oy) = self.view_offset;
        let g = self.grid as i64;
        let vx = (x as i64 + ox).clamp(0, g - 1) as usize;
        let vy = (y as i64 + oy).clamp(0, g - 1) as usize;
        self.patch(vx, vy)
    }

    /// Index of the object covering `patch` in view 0.
    pub fn object_at(&self, patch: usize) -> Option<usize> {
        self.objects
            .iter()
            .position(|o| o.footprint[0].binary_search(&patch).is_ok())
    }

    /// Target mask over all views, concatenated in view order.
    pub fn target_mask(&self) -> TargetMask {
        let n_v = self.patches_per_view();
        let t = self.target();
        TargetMask::from_indices(
            n_v * VIEWS,
            (0..VIEWS).flat_map(|v| t.footprint[v].iter().map(move |&p| v * n_v + p)),
        )
    }

    pub fn to_task(&self) -> TaskSpec {
        task_spec(self.benchmark_seed, self.suite, self.task)
    }
}

/// Seed identifying one episode of one task.
pub fn episode_seed(benchmark_seed: u64, suite: SuiteKind, task: usize, episode: usize) -> u64 {
    derive_seed(benchmark_seed, &[0xe915, suite.index(), task as u64, episode as u64])
}

fn rect(grid: usize, x0: usize, y0: usize, w: usize, h: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            out.push(y * grid + x);
        }
    }
    out
}

fn shifted(grid: usize, fp: &[usize], dx: i64, dy: i64) -> Option<Vec<usize>> {
    let g = grid as i64;
    let mut out = Vec::with_capacity(fp.len());
    for &p in fp {
        let x = (p % grid) as i64 + dx;
        let y = (p / grid) as i64 + dy;
        if x < 0 || y < 0 || x >= g || y >= g {
            return None;
        }
        out.push((y * g + x) as usize);
    }
    out.sort_unstable();
    Some(out)
}

/// Chebyshev gap between two footprints.
fn gap(grid: usize, a: &[usize], b: &[usize]) -> usize {
    let mut best = usize::MAX;
    for &p in a {
        for &q in b {
            let dx = (p % grid).abs_diff(q % grid);
            let dy = (p / grid).abs_diff(q / grid);
            best = best.min(dx.max(dy));
        }
    }
    best
}

const MAX_ATTEMPTS: usize = 200;

/// Lay out one episode of `spec` on a `grid × grid` lattice.
pub fn generate_scene(benchmark_seed: u64, spec: &TaskSpec, episode: usize, grid: usize) -> Result<Scene> {
    if grid < 8 {
        return Err(Error::Config(format!("grid must be at least 8, got {grid}")));
    }
    let seed = episode_seed(benchmark_seed, spec.suite, spec.task, episode);
    let mut rng = SeededRng::new(seed);

    let mut kinds: Vec<(ObjectKind, bool)> = Vec::with_capacity(spec.distractors.len() + 1);
    kinds.push((spec.target, true));
    kinds.extend(spec.distractors.iter().map(|&d| (d, false)));

    for _ in 0..MAX_ATTEMPTS {
        let mut footprints: Vec<[Vec<usize>; VIEWS]> = Vec::new();
        let mut ok = true;
        let n_items = kinds.len() + spec.regions.len();
        for item in 0..n_items {
            let (w, h) = if item < kinds.len() {
                (3 + rng.below(2), 3 + rng.below(2))
            } else {
                (2, 2)
            };
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                let x0 = rng.below(grid - w + 1);
                let y0 = rng.below(grid - h + 1);
                let fp0 = rect(grid, x0, y0, w, h);
                let dx = rng.below(3) as i64 - 1;
                let dy = rng.below(3) as i64 - 1;
                let Some(fp1) = shifted(grid, &fp0, dx, dy) else {
                    continue;
                };
                let clear = footprints
                    .iter()
                    .all(|f| gap(grid, &f[0], &fp0) >= 2 && gap(grid, &f[1], &fp1) >= 1);
                if clear {
                    footprints.push([fp0, fp1]);
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }

        let objects: Vec<SceneObject> = kinds
            .iter()
            .zip(&footprints)
            .map(|(&(kind, is_target), fp)| SceneObject {
                kind,
                name: kind.words().iter().map(|w| w.to_string()).collect(),
                class_id: kind.class_id(),
                footprint: fp.clone(),
                is_target,
                salience: rng.range(0.4, 1.0),
            })
            .collect();
        let regions: Vec<Region> = spec
            .regions
            .iter()
            .zip(&footprints[kinds.len()..])
            .map(|(&r, fp)| Region {
                region: r,
                word: REGIONS[r].to_string(),
                footprint: fp.clone(),
            })
            .collect();

        let target_fp = &objects[0].footprint[0];
        let occupied: Vec<usize> = footprints.iter().flat_map(|f| f[0].iter().copied()).collect();
        let free: Vec<usize> = (0..grid * grid)
            .filter(|p| !occupied.contains(p) && gap(grid, core::slice::from_ref(p), target_fp) >= 6)
            .collect();
        if free.is_empty() {
            continue;
        }
        let start = free[rng.below(free.len())];
        let view_offset = (rng.below(3) as i64 - 1, rng.below(3) as i64 - 1);

        let goal_region = spec
            .instruction
            .iter()
            .find_map(|w| regions.iter().find(|r| &r.word == w))
            .map(|r| r.footprint[0].clone());

        return Ok(Scene {
            benchmark_seed,
            suite: spec.suite,
            task: spec.task,
            episode,
            grid,
            objects,
            regions,
            goal_region,
            effector: (start % grid, start / grid),
            view_offset,
            instruction: spec.instruction.clone(),
            rng_seed: rng.next_u64(),
        });
    }
    Err(Error::Generation(format!(
        "could not place {} objects and {} regions on a {grid}x{grid} grid",
        kinds.len(),
        spec.regions.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::suite::TASKS_PER_SUITE;

    #[test]
    fn same_seeds_same_scene() {
        let spec = task_spec(0, SuiteKind::Spatial, 3);
        assert_eq!(
            generate_scene(0, &spec, 7, 16).unwrap(),
            generate_scene(0, &spec, 7, 16).unwrap()
        );
        assert_ne!(
            generate_scene(0, &spec, 7, 16).unwrap(),
            generate_scene(0, &spec, 8, 16).unwrap()
        );
    }

    #[test]
    fn footprints_disjoint_in_both_views() {
        for suite in SuiteKind::ALL {
            for task in 0..TASKS_PER_SUITE {
                let spec = task_spec(0, suite, task);
                for ep in 0..5 {
                    let s = generate_scene(0, &spec, ep, 16).unwrap();
                    assert_eq!(s.objects.iter().filter(|o| o.is_target).count(), 1);
                    for v in 0..VIEWS {
                        let mut all: Vec<usize> = s
                            .objects
                            .iter()
                            .flat_map(|o| o.footprint[v].iter().copied())
                            .chain(s.regions.iter().flat_map(|r| r.footprint[v].iter().copied()))
                            .collect();
                        let n = all.len();
                        all.sort_unstable();
                        all.dedup();
                        assert_eq!(all.len(), n);
                        assert!(all.iter().all(|&p| p < 256));
                    }
                    assert!(s.object_at(s.effector_patch(0)).is_none());
                }
            }
        }
    }

    #[test]
    fn single_object_task() {
        let mut spec = task_spec(0, SuiteKind::Spatial, 0);
        spec.distractors.clear();
        let s = generate_scene(0, &spec, 0, 16).unwrap();
        assert_eq!(s.objects.len(), 1);
        let name = s.target_name();
        assert!(s.instruction.join(" ").contains(&name));
    }

    #[test]
    fn target_mask_covers_both_views() {
        let spec = task_spec(0, SuiteKind::Goal, 1);
        let s = generate_scene(0, &spec, 2, 16).unwrap();
        let m = s.target_mask();
        assert_eq!(m.len(), 512);
        assert_eq!(m.positives(), 2 * s.target().footprint[0].len());
    }

    #[test]
    fn tiny_grid_is_rejected() {
        let spec = task_spec(0, SuiteKind::Long, 0);
        assert!(matches!(generate_scene(0, &spec, 0, 4), Err(Error::Config(_))));
    }
}
