//! Frozen stand-in for the backbone: fixed embedding tables, misaligned
//! per-view and language mixers, and a small trunk used only to model the
//! cost of a backbone step.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, VIEWS};
use super::suite::{ObjectKind, COLORS, FAMILIES, FUNCTION_WORDS, REGIONS, SHAPES};
use crate::numerics::{gelu, Tensor2D};
use crate::rng::{derive_seed, fnv1a, ContentHasher, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmulatorConfig {
    pub d: usize,
    pub word_table_rows: usize,
    /// Std of the static per-patch and per-token noise (vector norm scale).
    pub noise_sigma: f64,
    pub class_residual: f64,
    /// Scale of a shape's own direction on top of its family direction.
    pub shape_specific: f64,
    /// Weight of the decayed sum of earlier words in a token's state.
    pub context_gain: f64,
    pub context_decay: f64,
    /// Nominal backbone layer whose states feed the heads.
    pub layer: usize,
    pub distractor_leak: f64,
    pub attention_gain: f64,
    pub background_sigma: f64,
    pub goal_weight: f64,
    pub trunk_layers: usize,
    pub trunk_width: usize,
    pub trunk_ffn: usize,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            d: 32,
            word_table_rows: 16384,
            noise_sigma: 0.3,
            class_residual: 0.3,
            shape_specific: 0.7,
            context_gain: 1.0,
            context_decay: 0.9,
            layer: 12,
            distractor_leak: 0.4,
            attention_gain: 6.0,
            background_sigma: 0.1,
            goal_weight: 0.65,
            trunk_layers: 4,
            trunk_width: 64,
            trunk_ffn: 256,
        }
    }
}

impl EmulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let lexicon = COLORS.len() + SHAPES.len() + REGIONS.len() + FUNCTION_WORDS.len();
        if self.d == 0 {
            return Err(Error::Config("emulator width must be positive".into()));
        }
        if self.word_table_rows <= lexicon {
            return Err(Error::Config(alloc::format!(
                "word table needs more than {lexicon} rows"
            )));
        }
        if self.noise_sigma < 0.0 || self.background_sigma < 0.0 || self.distractor_leak < 0.0 {
            return Err(Error::Config("noise and leak must be non-negative".into()));
        }
        Ok(())
    }
}

/// Residual GELU blocks over a lifted token width. Only its cost matters.
#[derive(Debug, Clone)]
pub struct Trunk {
    lift: Tensor2D,
    blocks: Vec<(Tensor2D, Tensor2D)>,
    lower: Tensor2D,
}

impl Trunk {
    fn new(d: usize, width: usize, ffn: usize, layers: usize, rng: &mut SeededRng) -> Self {
        let mut mat = |r: usize, c: usize| {
            let s = 1.0 / libm::sqrt(r as f64);
            Tensor2D::from_vec(r, c, (0..r * c).map(|_| s * rng.gaussian()).collect()).expect("shape")
        };
        let lift = mat(d, width);
        let blocks = (0..layers).map(|_| (mat(width, ffn), mat(ffn, width))).collect();
        let lower = mat(width, d);
        Self { lift, blocks, lower }
    }

    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        let mut h = x.matmul(&self.lift)?;
        for (a, b) in &self.blocks {
            let inner = h.matmul(a)?.map(gelu);
            let delta = inner.matmul(b)?;
            for (v, dv) in h.data_mut().iter_mut().zip(delta.data()) {
                *v += 0.1 * dv;
            }
        }
        h.matmul(&self.lower)
    }

    pub fn param_count(&self) -> usize {
        self.lift.data().len()
            + self.lower.data().len()
            + self
                .blocks
                .iter()
                .map(|(a, b)| a.data().len() + b.data().len())
                .sum::<usize>()
    }

    fn hash_into(&self, h: &mut ContentHasher) {
        h.write_f64s(self.lift.data());
        for (a, b) in &self.blocks {
            h.write_f64s(a.data());
            h.write_f64s(b.data());
        }
        h.write_f64s(self.lower.data());
    }
}

#[derive(Debug, Clone)]
pub struct BackboneEmulation {
    pub cfg: EmulatorConfig,
    pub seed: u64,
    color_emb: Tensor2D,
    shape_emb: Tensor2D,
    family_emb: Tensor2D,
    class_res: Tensor2D,
    region_emb: Tensor2D,
    background: Vec<f64>,
    effector: Vec<f64>,
    word_table: Tensor2D,
    lexicon: BTreeMap<String, usize>,
    view_mixers: [Tensor2D; VIEWS],
    embed_mixers: [Tensor2D; VIEWS],
    lang_mixer: Tensor2D,
    trunk: Trunk,
}

/// Static per-scene image states with the effector contribution kept apart.
#[derive(Debug, Clone)]
pub struct SceneFrame {
    base: [Tensor2D; VIEWS],
    effector_delta: [Vec<f64>; VIEWS],
    embed_base: [Tensor2D; VIEWS],
    embed_effector: [Vec<f64>; VIEWS],
    /// Static per-patch attention noise, view 0.
    pub attention_noise: Vec<f64>,
}

impl SceneFrame {
    pub fn patches(&self) -> usize {
        self.base[0].rows()
    }

    /// Hidden state of `patch` in `view` given the effector patch there.
    pub fn img_row(&self, view: usize, patch: usize, effector_patch: usize) -> Vec<f64> {
        let mut row = self.base[view].row(patch).to_vec();
        if patch == effector_patch {
            for (r, e) in row.iter_mut().zip(&self.effector_delta[view]) {
                *r += e;
            }
        }
        row
    }

    pub fn h_img(&self, view: usize, effector_patch: usize) -> Tensor2D {
        let mut h = self.base[view].clone();
        for (r, e) in h.row_mut(effector_patch).iter_mut().zip(&self.effector_delta[view]) {
            *r += e;
        }
        h
    }

    pub fn e_img(&self, view: usize, effector_patch: usize) -> Tensor2D {
        let mut e = self.embed_base[view].clone();
        for (r, d) in e.row_mut(effector_patch).iter_mut().zip(&self.embed_effector[view]) {
            *r += d;
        }
        e
    }
}

/// Everything the emulator emits for one observation.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    pub h_img: [Tensor2D; VIEWS],
    pub h_lang: Tensor2D,
    pub e_img: [Tensor2D; VIEWS],
}

fn gaussian_table(rows: usize, d: usize, rng: &mut SeededRng) -> Tensor2D {
    let s = 1.0 / libm::sqrt(d as f64);
    Tensor2D::from_vec(rows, d, (0..rows * d).map(|_| s * rng.gaussian()).collect()).expect("shape")
}

fn gaussian_vec(d: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    let s = scale / libm::sqrt(d as f64);
    (0..d).map(|_| s * rng.gaussian()).collect()
}

/// `x · Mᵀ` for a single row.
fn mix_row(m: &Tensor2D, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| crate::numerics::dot(m.row(i), x)).collect()
}

impl BackboneEmulation {
    pub fn new(benchmark_seed: u64, cfg: EmulatorConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let mut rng = SeededRng::new(derive_seed(benchmark_seed, &[0xb0b, d as u64]));
        let color_emb = gaussian_table(COLORS.len(), d, &mut rng);
        let shape_emb = gaussian_table(SHAPES.len(), d, &mut rng);
        let family_emb = gaussian_table(FAMILIES, d, &mut rng);
        let class_res = gaussian_table(COLORS.len() * SHAPES.len(), d, &mut rng);
        let region_emb = gaussian_table(REGIONS.len(), d, &mut rng);
        let background = gaussian_vec(d, 1.0, &mut rng);
        let effector = gaussian_vec(d, 1.0, &mut rng);
        let word_table = gaussian_table(cfg.word_table_rows, d, &mut rng);
        let view_mixers = [gaussian_table(d, d, &mut rng), gaussian_table(d, d, &mut rng)];
        let embed_mixers = [gaussian_table(d, d, &mut rng), gaussian_table(d, d, &mut rng)];
        let lang_mixer = gaussian_table(d, d, &mut rng);
        let trunk = Trunk::new(d, cfg.trunk_width, cfg.trunk_ffn, cfg.trunk_layers, &mut rng);

        let mut lexicon = BTreeMap::new();
        for w in COLORS.iter().chain(&SHAPES).chain(&REGIONS).chain(&FUNCTION_WORDS) {
            let id = lexicon.len();
            lexicon.entry(w.to_string()).or_insert(id);
        }

        Ok(Self {
            cfg,
            seed: benchmark_seed,
            color_emb,
            shape_emb,
            family_emb,
            class_res,
            region_emb,
            background,
            effector,
            word_table,
            lexicon,
            view_mixers,
            embed_mixers,
            lang_mixer,
            trunk,
        })
    }

    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    /// Row of the word table; out-of-lexicon words hash into the tail.
    pub fn word_id(&self, word: &str) -> usize {
        let w = crate::readiness::normalize_word(word);
        if let Some(&id) = self.lexicon.get(&w) {
            return id;
        }
        let tail = self.cfg.word_table_rows - self.lexicon.len();
        self.lexicon.len() + (fnv1a(w.as_bytes()) % tail as u64) as usize
    }

    pub fn word_embedding(&self, word: &str) -> &[f64] {
        self.word_table.row(self.word_id(word))
    }

    pub fn class_embedding(&self, kind: ObjectKind) -> Vec<f64> {
        let c = self.color_emb.row(kind.color);
        let s = self.shape_emb.row(kind.shape);
        let f = self.family_emb.row(kind.family());
        let r = self.class_res.row(kind.class_id());
        (0..self.cfg.d)
            .map(|k| c[k] + f[k] + self.cfg.shape_specific * s[k] + self.cfg.class_residual * r[k])
            .collect()
    }

    /// Parameters held in the frozen embedding tables.
    pub fn embedding_param_count(&self) -> usize {
        [
            &self.color_emb,
            &self.shape_emb,
            &self.family_emb,
            &self.class_res,
            &self.region_emb,
            &self.word_table,
        ]
        .iter()
        .map(|t| t.data().len())
        .sum::<usize>()
            + self.background.len()
            + self.effector.len()
    }

    pub fn param_count(&self) -> usize {
        self.embedding_param_count()
            + self
                .view_mixers
                .iter()
                .chain(&self.embed_mixers)
                .map(|m| m.data().len())
                .sum::<usize>()
            + self.lang_mixer.data().len()
            + self.trunk.param_count()
    }

    /// Content hash of every frozen table.
    pub fn state_hash(&self) -> u64 {
        let mut h = ContentHasher::default();
        for t in [
            &self.color_emb,
            &self.shape_emb,
            &self.family_emb,
            &self.class_res,
            &self.region_emb,
            &self.word_table,
        ] {
            h.write_f64s(t.data());
        }
        h.write_f64s(&self.background);
        h.write_f64s(&self.effector);
        for m in self.view_mixers.iter().chain(&self.embed_mixers) {
            h.write_f64s(m.data());
        }
        h.write_f64s(self.lang_mixer.data());
        self.trunk.hash_into(&mut h);
        for (w, id) in &self.lexicon {
            h.write_bytes(w.as_bytes());
            h.write_u64(*id as u64);
        }
        h.finish()
    }

    /// Pre-mixing content of each patch of `view`, without noise or effector.
    fn patch_content(&self, scene: &Scene, view: usize) -> Vec<Vec<f64>> {
        let n = scene.patches_per_view();
        let mut rows = vec![self.background.clone(); n];
        for r in &scene.regions {
            for &p in &r.footprint[view] {
                rows[p] = self.region_emb.row(r.region).to_vec();
            }
        }
        for o in &scene.objects {
            let e = self.class_embedding(o.kind);
            for &p in &o.footprint[view] {
                rows[p] = e.clone();
            }
        }
        rows
    }

    pub fn frame(&self, scene: &Scene) -> SceneFrame {
        let n = scene.patches_per_view();
        let d = self.cfg.d;
        let build = |view: usize| {
            let mut rng = SeededRng::new(derive_seed(scene.rng_seed, &[0x1b, view as u64]));
            let content = self.patch_content(scene, view);
            let mut base = Tensor2D::zeros(n, d);
            let mut embed = Tensor2D::zeros(n, d);
            for (p, c) in content.iter().enumerate() {
                let noise = gaussian_vec(d, self.cfg.noise_sigma, &mut rng);
                let noisy: Vec<f64> = c.iter().zip(&noise).map(|(a, b)| a + b).collect();
                base.row_mut(p)
                    .copy_from_slice(&mix_row(&self.view_mixers[view], &noisy));
                embed.row_mut(p).copy_from_slice(&mix_row(&self.embed_mixers[view], c));
            }
            (
                base,
                mix_row(&self.view_mixers[view], &self.effector),
                embed,
                mix_row(&self.embed_mixers[view], &self.effector),
            )
        };
        let (b0, d0, e0, ed0) = build(0);
        let (b1, d1, e1, ed1) = build(1);
        let mut rng = SeededRng::new(derive_seed(scene.rng_seed, &[0xa7]));
        let attention_noise = (0..n).map(|_| rng.gaussian()).collect();
        SceneFrame {
            base: [b0, b1],
            effector_delta: [d0, d1],
            embed_base: [e0, e1],
            embed_effector: [ed0, ed1],
            attention_noise,
        }
    }

    /// Causal language state of token `j` (before mixing and noise).
    fn token_state<S: AsRef<str>>(&self, tokens: &[S], j: usize) -> Vec<f64> {
        let mut state = self.word_embedding(tokens[j].as_ref()).to_vec();
        let mut w = self.cfg.context_gain;
        for i in (0..j).rev() {
            for (s, e) in state.iter_mut().zip(self.word_embedding(tokens[i].as_ref())) {
                *s += w * e;
            }
            w *= self.cfg.context_decay;
        }
        state
    }

    /// Hidden state of token `j`; depends only on tokens `0..=j`.
    pub fn lang_row<S: AsRef<str>>(&self, scene_seed: u64, tokens: &[S], j: usize) -> Vec<f64> {
        let mut state = self.token_state(tokens, j);
        let mut rng = SeededRng::new(derive_seed(scene_seed, &[0x1a, j as u64]));
        for (s, n) in state
            .iter_mut()
            .zip(gaussian_vec(self.cfg.d, self.cfg.noise_sigma, &mut rng))
        {
            *s += n;
        }
        mix_row(&self.lang_mixer, &state)
    }

    pub fn h_lang<S: AsRef<str>>(&self, scene_seed: u64, tokens: &[S]) -> Tensor2D {
        let mut out = Tensor2D::zeros(tokens.len(), self.cfg.d);
        for j in 0..tokens.len() {
            out.row_mut(j).copy_from_slice(&self.lang_row(scene_seed, tokens, j));
        }
        out
    }

    /// Image, language and embedding states for `scene` at `prefix`.
    pub fn emit_hidden_states<S: AsRef<str>>(&self, scene: &Scene, prefix: &[S]) -> HiddenStates {
        let frame = self.frame(scene);
        let h_img = [
            frame.h_img(0, scene.effector_patch(0)),
            frame.h_img(1, scene.effector_patch(1)),
        ];
        let e_img = [
            frame.e_img(0, scene.effector_patch(0)),
            frame.e_img(1, scene.effector_patch(1)),
        ];
        HiddenStates {
            h_img,
            h_lang: self.h_lang(scene.rng_seed, prefix),
            e_img,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::scene::generate_scene;
    use crate::simworld::suite::{task_spec, SuiteKind};

    fn emu(noise: f64) -> BackboneEmulation {
        BackboneEmulation::new(
            0,
            EmulatorConfig {
                noise_sigma: noise,
                ..EmulatorConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn same_object_patches_match_without_noise() {
        let e = emu(0.0);
        let s = generate_scene(0, &task_spec(0, SuiteKind::Spatial, 0), 0, 16).unwrap();
        let hs = e.emit_hidden_states(&s, &s.instruction);
        let t = s.target();
        let a = hs.h_img[0].row(t.footprint[0][0]);
        let b = hs.h_img[0].row(t.footprint[0][1]);
        assert_eq!(a, b);
        let bg = (0..256)
            .find(|&p| {
                s.object_at(p).is_none()
                    && p != s.effector_patch(0)
                    && !s.regions.iter().any(|r| r.footprint[0].contains(&p))
            })
            .unwrap();
        assert_ne!(hs.h_img[0].row(bg), a);
    }

    #[test]
    fn deterministic_and_finite() {
        let e = emu(0.3);
        let s = generate_scene(0, &task_spec(0, SuiteKind::Long, 2), 3, 16).unwrap();
        let a = e.emit_hidden_states(&s, &s.instruction);
        let b = e.emit_hidden_states(&s, &s.instruction);
        for v in 0..VIEWS {
            assert_eq!(a.h_img[v], b.h_img[v]);
            assert!(a.h_img[v].is_finite());
            assert_eq!(a.e_img[v], b.e_img[v]);
        }
        assert_eq!(a.h_lang, b.h_lang);
        assert_eq!(e.state_hash(), emu(0.3).state_hash());
    }

    #[test]
    fn language_states_are_causal() {
        let e = emu(0.3);
        let words = ["pick", "up", "the", "red", "mug"];
        let full = e.h_lang(9, &words);
        let part = e.h_lang(9, &words[..3]);
        for j in 0..3 {
            assert_eq!(full.row(j), part.row(j));
        }
    }

    #[test]
    fn unknown_words_hash_into_the_tail() {
        let e = emu(0.3);
        let id = e.word_id("zebra");
        assert!((45..16384).contains(&id));
        assert_eq!(e.word_id("Red"), e.word_id("red"));
    }

    #[test]
    fn trainable_heads_are_under_one_percent() {
        let e = emu(0.3);
        let heads = 2 * (32 * 32 + 32 + 32 * 32 + 32) + 1;
        assert!((heads as f64) < 0.01 * e.embedding_param_count() as f64);
    }
}
