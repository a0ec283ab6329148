//! Synthetic task families, their vocabulary and instruction templates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, SeededRng};
use crate::streaming::split_words;
use crate::{Error, Result};

pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "orange", "purple"];
/// Shapes come in families of [`FAMILY_SIZE`] consecutive entries whose
/// image embeddings are close.
pub const SHAPES: [&str; 12] = [
    "mug", "cup", "glass", "bowl", "plate", "dish", "box", "crate", "carton", "bottle", "can", "jar",
];
pub const FAMILY_SIZE: usize = 3;
pub const FAMILIES: usize = SHAPES.len() / FAMILY_SIZE;
pub const REGIONS: [&str; 8] = ["basket", "tray", "shelf", "drawer", "stove", "cabinet", "rack", "bin"];
pub const FUNCTION_WORDS: [&str; 28] = [
    "pick", "up", "the", "and", "place", "it", "on", "put", "in", "next", "to", "then", "move", "past", "inside",
    "left", "of", "take", "from", "close", "open", "find", "into", "top", "reach", "over", "first", "all",
];

pub const TASKS_PER_SUITE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    Spatial,
    Object,
    Goal,
    Long,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 4] = [SuiteKind::Spatial, SuiteKind::Object, SuiteKind::Goal, SuiteKind::Long];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Spatial => "spatial",
            SuiteKind::Object => "object",
            SuiteKind::Goal => "goal",
            SuiteKind::Long => "long",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spatial" => Ok(SuiteKind::Spatial),
            "object" => Ok(SuiteKind::Object),
            "goal" => Ok(SuiteKind::Goal),
            "long" => Ok(SuiteKind::Long),
            other => Err(Error::Config(format!("unknown suite '{other}'"))),
        }
    }
}

/// An object identity: color index and shape index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectKind {
    pub color: usize,
    pub shape: usize,
}

impl ObjectKind {
    pub fn family(self) -> usize {
        self.shape / FAMILY_SIZE
    }

    pub fn class_id(self) -> usize {
        self.color * SHAPES.len() + self.shape
    }

    pub fn name(self) -> String {
        format!("{} {}", COLORS[self.color], SHAPES[self.shape])
    }

    pub fn words(self) -> [&'static str; 2] {
        [COLORS[self.color], SHAPES[self.shape]]
    }
}

/// One fixed task: which objects exist, which one is the target, which
/// regions are present, and the instruction. Episodes of a task differ only
/// in layout and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub suite: SuiteKind,
    pub task: usize,
    pub target: ObjectKind,
    pub distractors: Vec<ObjectKind>,
    pub regions: Vec<usize>,
    pub instruction: Vec<String>,
}

impl TaskSpec {
    pub fn target_name(&self) -> String {
        self.target.name()
    }

    /// Word index (1-based count) at which the full target name is visible.
    pub fn target_complete_at(&self) -> usize {
        let [c, s] = self.target.words();
        let mut seen = (false, false);
        for (i, w) in self.instruction.iter().enumerate() {
            seen.0 |= w == c;
            seen.1 |= w == s;
            if seen.0 && seen.1 {
                return i + 1;
            }
        }
        self.instruction.len()
    }
}

fn pick_distinct(rng: &mut SeededRng, n: usize, exclude: &[usize]) -> usize {
    loop {
        let v = rng.below(n);
        if !exclude.contains(&v) {
            return v;
        }
    }
}

/// Deterministic task definition for `(benchmark_seed, suite, task)`.
pub fn task_spec(benchmark_seed: u64, suite: SuiteKind, task: usize) -> TaskSpec {
    let mut rng = SeededRng::new(derive_seed(benchmark_seed, &[0x7a5c, suite.index(), task as u64]));
    let target = ObjectKind {
        color: rng.below(COLORS.len()),
        shape: rng.below(SHAPES.len()),
    };
    // Every object in a task has its own shape word; confusion comes from a
    // shared color (language side) or a shared family (image side).
    let (same_color, same_family, others) = match suite {
        SuiteKind::Spatial => (2, 0, 1 + rng.below(2)),
        SuiteKind::Object => (0, 2, 1 + rng.below(2)),
        SuiteKind::Goal => (1, 1, 1 + rng.below(2)),
        SuiteKind::Long => (1, 1, 2),
    };
    let family = target.family();
    let in_family: Vec<usize> = (0..SHAPES.len()).filter(|&s| s / FAMILY_SIZE == family).collect();
    let out_family: Vec<usize> = (0..SHAPES.len()).filter(|&s| s / FAMILY_SIZE != family).collect();
    let mut used = alloc::vec![target.shape];
    let take_shape = |rng: &mut SeededRng, pool: &[usize], used: &mut Vec<usize>| {
        let free: Vec<usize> = pool.iter().copied().filter(|s| !used.contains(s)).collect();
        let s = free[rng.below(free.len())];
        used.push(s);
        s
    };
    let mut distractors: Vec<ObjectKind> = Vec::new();
    for _ in 0..same_color {
        let shape = take_shape(&mut rng, &out_family, &mut used);
        distractors.push(ObjectKind {
            color: target.color,
            shape,
        });
    }
    for _ in 0..same_family {
        let shape = take_shape(&mut rng, &in_family, &mut used);
        distractors.push(ObjectKind {
            color: pick_distinct(&mut rng, COLORS.len(), &[target.color]),
            shape,
        });
    }
    for _ in 0..others {
        let shape = take_shape(&mut rng, &out_family, &mut used);
        distractors.push(ObjectKind {
            color: pick_distinct(&mut rng, COLORS.len(), &[target.color]),
            shape,
        });
    }

    let mut regions: Vec<usize> = (0..REGIONS.len()).collect();
    rng.shuffle(&mut regions);
    regions.truncate(3);

    let c = COLORS[target.color];
    let s = SHAPES[target.shape];
    let (r0, r1, r2) = (REGIONS[regions[0]], REGIONS[regions[1]], REGIONS[regions[2]]);
    // Each template puts a quartile training prefix right after the color
    // word, so the longest not-yet-named prefix is always supervised.
    let text = match (suite, task % 2) {
        (SuiteKind::Spatial, 0) => format!("from the {r1} pick up the {c} {s} and place it on the {r0}"),
        (SuiteKind::Spatial, _) => format!("pick up the {c} {s} next to the {r1} and place it on the {r0}"),
        (SuiteKind::Object, 0) => format!("take the {c} {s} from the {r1} into the {r0}"),
        (SuiteKind::Object, _) => format!("next to the {r1} find the {c} {s} and put it in the {r0}"),
        (SuiteKind::Goal, 0) => format!("in the {r0} next to the {r1} put the {c} {s} on top"),
        (SuiteKind::Goal, _) => format!("open the {r0} left of the {r1} and place the {c} {s} inside it"),
        (SuiteKind::Long, 0) => format!(
            "reach over and pick the {c} {s} and place it in the {r0} then move the {r1} next to the {r2} and close it"
        ),
        (SuiteKind::Long, _) => format!(
            "first of all take the {c} {s} then put it on the {r0} and move past the {r1} to the {r2} and close it"
        ),
    };

    TaskSpec {
        suite,
        task,
        target,
        distractors,
        regions,
        instruction: split_words(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tasks_are_deterministic_and_name_the_target() {
        for suite in SuiteKind::ALL {
            for t in 0..TASKS_PER_SUITE {
                let a = task_spec(0, suite, t);
                assert_eq!(a, task_spec(0, suite, t));
                let [c, s] = a.target.words();
                assert!(a.instruction.iter().any(|w| w == c));
                assert!(a.instruction.iter().any(|w| w == s));
                assert!(!a.distractors.contains(&a.target));
            }
        }
    }

    #[test]
    fn suite_distractor_structure() {
        for t in 0..TASKS_PER_SUITE {
            let sp = task_spec(0, SuiteKind::Spatial, t);
            assert!(sp.distractors.iter().filter(|d| d.color == sp.target.color).count() >= 2);
            let ob = task_spec(0, SuiteKind::Object, t);
            assert!(
                ob.distractors
                    .iter()
                    .filter(|d| d.family() == ob.target.family())
                    .count()
                    >= 2
            );
            let go = task_spec(0, SuiteKind::Goal, t);
            assert!(4 * go.target_complete_at() > 3 * go.instruction.len());
            let lo = task_spec(0, SuiteKind::Long, t);
            assert!(3 * lo.target_complete_at() <= lo.instruction.len());
        }
    }

    #[test]
    fn shape_words_are_unique_within_a_task() {
        for suite in SuiteKind::ALL {
            for t in 0..TASKS_PER_SUITE {
                let a = task_spec(3, suite, t);
                let mut shapes: Vec<usize> = a.distractors.iter().map(|d| d.shape).collect();
                shapes.push(a.target.shape);
                let n = shapes.len();
                shapes.sort_unstable();
                shapes.dedup();
                assert_eq!(shapes.len(), n);
            }
        }
    }

    #[test]
    fn a_training_prefix_ends_on_the_color_word() {
        for suite in SuiteKind::ALL {
            for t in 0..2 {
                let a = task_spec(0, suite, t);
                let lengths = crate::streaming::training_prefix_lengths(a.instruction.len());
                assert!(lengths.contains(&(a.target_complete_at() - 1)), "{suite:?} {t}");
            }
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in SuiteKind::ALL {
            assert_eq!(SuiteKind::parse(s.name()).unwrap(), s);
        }
        assert!(SuiteKind::parse("nope").is_err());
    }
}
