//! Deterministic synthetic backend.
//!
//! A [`SyntheticScene`] plants a small target block (which holds the
//! answer) and a salient distractor block on a grid. The mock model only
//! reads the answer when the current view *resolves* the target: the view
//! contains at least [`RESOLVE_COVERAGE`] of the target cells and the target
//! fills at least [`RESOLVE_SHARE`] of the view. Otherwise it either
//! explores, or (more often at high temperature) fixates on the distractor
//! and confidently reports a decoy answer.
//!
//! Every constant below is part of the documented rule table, so any
//! output can be derived by hand.
//!
//! Attention (additive over [`BASE`] on every cell):
//!
//! | text                         | distractor | target |
//! |------------------------------|-----------:|-------:|
//! | descriptive prompt           | +5         | +2     |
//! | exploratory step             | +5         | +2     |
//! | on-target step, question     | +2         | +6     |
//! | distractor (decoy) step      | +12        | +2     |
//!
//! Multi-line text averages the per-line maps. Step `i` (1-based within
//! the scored text) has mean log-prob `-0.2 * i - c`, with `c` = 0.1 for
//! on-target lines, 0.8 for exploratory or unrecognized lines, and 0.9 for
//! decoy lines; a text's mean log-prob is the mean over its lines.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{approx_tokens, Backend, BackendCaps, DescribeCache, Generation, ImageHandle, ViewSpec, DEFAULT_DESCRIPTIVE_PROMPT};
use crate::attention::AttentionGrid;
use crate::error::{invalid, Error, Result};
use crate::focus::Rect;
use crate::scoring::{ReasoningStep, TERMINATOR};

pub const BASE: f64 = 1.0;
pub const DESC_DISTRACTOR: f64 = 5.0;
pub const DESC_TARGET: f64 = 2.0;
pub const QUESTION_DISTRACTOR: f64 = 2.0;
pub const QUESTION_TARGET: f64 = 6.0;
pub const DECOY_DISTRACTOR: f64 = 20.0;
pub const DECOY_TARGET: f64 = 2.0;

pub const STEP_DECAY: f64 = 0.2;
pub const ON_TARGET_OFFSET: f64 = 0.1;
pub const OFF_TARGET_OFFSET: f64 = 0.8;
pub const DECOY_OFFSET: f64 = 0.9;

pub const RESOLVE_COVERAGE: f64 = 0.75;
pub const RESOLVE_SHARE: f64 = 0.05;

/// Probability of a decoy sample on an unresolved view at temperature 1.0;
/// it falls linearly to zero at 0.4.
pub const DECOY_PROB_AT_MAX_T: f64 = 0.8;

pub const MAX_STEPS_LIMIT: usize = 64;
pub const MAX_TEXT_BYTES: usize = 64 * 1024;

pub const SCENE_GRID: (usize, usize) = (16, 16);
pub const SCENE_PATCH_PX: u32 = 14;

const TARGET_SIZES: [(usize, usize); 5] = [(2, 2), (2, 2), (2, 3), (3, 3), (4, 4)];
const DISTRACTOR_SIZE: (usize, usize) = (3, 3);

const COLORS: [&str; 8] = ["amber", "cobalt", "crimson", "ivory", "jade", "olive", "slate", "violet"];
const OBJECTS: [&str; 8] = ["lantern", "kettle", "bicycle", "compass", "umbrella", "violin", "teapot", "anchor"];

/// A seeded grid world with a planted answer region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub grid_shape: (usize, usize),
    pub target_cells: BTreeSet<(usize, usize)>,
    pub distractor_cells: BTreeSet<(usize, usize)>,
    pub answer: String,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn new(
        grid_shape: (usize, usize),
        target_cells: BTreeSet<(usize, usize)>,
        distractor_cells: BTreeSet<(usize, usize)>,
        answer: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let (h, w) = grid_shape;
        let answer = answer.into();
        if h == 0 || w == 0 {
            return Err(invalid("scene grid must be non-empty"));
        }
        if target_cells.is_empty() {
            return Err(invalid("scene needs at least one target cell"));
        }
        if answer.trim().is_empty() || answer.contains('\n') {
            return Err(invalid("scene answer must be a non-empty single line"));
        }
        if let Some(c) = target_cells.iter().chain(&distractor_cells).find(|(r, c)| *r >= h || *c >= w) {
            return Err(invalid(format!("scene cell {c:?} outside grid {grid_shape:?}")));
        }
        if !target_cells.is_disjoint(&distractor_cells) {
            return Err(invalid("target and distractor cells overlap"));
        }
        Ok(Self {
            grid_shape,
            target_cells,
            distractor_cells,
            answer,
            seed,
        })
    }

    /// Random 16x16 scene: one target block, one 3x3 distractor block at
    /// least one cell away from it.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = SCENE_GRID;
        let (th, tw) = TARGET_SIZES[rng.random_range(0..TARGET_SIZES.len())];
        let target = Rect::new(rng.random_range(0..=h - th), rng.random_range(0..=w - tw), th, tw);
        let (dh, dw) = DISTRACTOR_SIZE;
        let distractor = loop {
            let d = Rect::new(rng.random_range(0..=h - dh), rng.random_range(0..=w - dw), dh, dw);
            let apart = d.row0 > target.row0 + th
                || target.row0 > d.row0 + dh
                || d.col0 > target.col0 + tw
                || target.col0 > d.col0 + dw;
            if apart {
                break d;
            }
        };
        let answer = format!(
            "{} {}",
            COLORS[rng.random_range(0..COLORS.len())],
            OBJECTS[rng.random_range(0..OBJECTS.len())]
        );
        Self {
            grid_shape: SCENE_GRID,
            target_cells: target.cells().collect(),
            distractor_cells: distractor.cells().collect(),
            answer,
            seed,
        }
    }

    /// Parses `key=value` pairs separated by `;`:
    /// `grid=HxW`, `target=r,c,h,w`, `distractor=r,c,h,w` (repeatable),
    /// `answer=...`, `seed=N`. A spec with only `seed` gives [`random`](Self::random).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = None;
        let mut target = BTreeSet::new();
        let mut distractor = BTreeSet::new();
        let mut answer = None;
        let mut seed = None;
        let rect = |v: &str| -> Result<Rect> {
            let n: Vec<usize> = v
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| invalid(format!("bad rect {v:?}"))))
                .collect::<Result<_>>()?;
            match n[..] {
                [r, c, h, w] if h > 0 && w > 0 => Ok(Rect::new(r, c, h, w)),
                _ => Err(invalid(format!("rect needs r,c,h,w with h,w > 0: {v:?}"))),
            }
        };
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("scene field {part:?} is not key=value")))?;
            match key.trim() {
                "grid" => {
                    let (h, w) = value
                        .split_once('x')
                        .ok_or_else(|| invalid(format!("grid must be HxW: {value:?}")))?;
                    let p = |s: &str| s.trim().parse::<usize>().map_err(|_| invalid(format!("bad grid {value:?}")));
                    grid = Some((p(h)?, p(w)?));
                }
                "target" => target.extend(rect(value)?.cells()),
                "distractor" => distractor.extend(rect(value)?.cells()),
                "answer" => answer = Some(value.trim().to_owned()),
                "seed" => seed = Some(value.trim().parse().map_err(|_| invalid(format!("bad seed {value:?}")))?),
                other => return Err(invalid(format!("unknown scene field {other:?}"))),
            }
        }
        let seed = seed.unwrap_or(0);
        if grid.is_none() && target.is_empty() && distractor.is_empty() {
            let mut scene = Self::random(seed);
            if let Some(a) = answer {
                scene.answer = a;
            }
            return Ok(scene);
        }
        let grid = grid.ok_or_else(|| invalid("scene spec needs grid=HxW"))?;
        let answer = answer.ok_or_else(|| invalid("scene spec needs answer=..."))?;
        Self::new(grid, target, distractor, answer, seed)
    }

    pub fn image_id(&self) -> String {
        format!("scene-{:016x}", fnv1a(&format!("{self:?}")))
    }

    pub fn image_handle(&self) -> ImageHandle {
        ImageHandle::synthetic(self.image_id(), self.grid_shape, SCENE_PATCH_PX)
    }

    /// The wrong answer the mock gives when it fixates on the distractor.
    pub fn decoy(&self) -> String {
        let start = (self.seed % (COLORS.len() * OBJECTS.len()) as u64) as usize;
        (0..COLORS.len() * OBJECTS.len())
            .map(|i| {
                let j = (start + i) % (COLORS.len() * OBJECTS.len());
                format!("{} {}", COLORS[j % COLORS.len()], OBJECTS[j / COLORS.len()])
            })
            .find(|d| !d.contains(&self.answer) && !self.answer.contains(d.as_str()))
            .expect("word table always contains a decoy")
    }

    /// Bounding rect of the target cells.
    pub fn target_rect(&self) -> Rect {
        bounding(&self.target_cells)
    }

    pub fn distractor_rect(&self) -> Option<Rect> {
        (!self.distractor_cells.is_empty()).then(|| bounding(&self.distractor_cells))
    }

    /// Fraction of target cells inside `rect`.
    pub fn target_coverage(&self, rect: &Rect) -> f64 {
        let inside = self.target_cells.iter().filter(|(r, c)| rect.contains(*r, *c)).count();
        inside as f64 / self.target_cells.len() as f64
    }

    pub fn resolves(&self, rect: &Rect) -> bool {
        let inside = self.target_cells.iter().filter(|(r, c)| rect.contains(*r, *c)).count();
        self.target_coverage(rect) >= RESOLVE_COVERAGE && inside as f64 / rect.area() as f64 >= RESOLVE_SHARE
    }

    fn on_target_steps(&self) -> [String; 2] {
        let t = self.target_rect();
        [
            format!(
                "Inspect the target region at rows {}-{}, columns {}-{}.",
                t.row0,
                t.row0 + t.height - 1,
                t.col0,
                t.col0 + t.width - 1
            ),
            format!("{} {TERMINATOR}", self.answer),
        ]
    }

    fn decoy_steps(&self) -> [String; 2] {
        let first = match self.distractor_rect() {
            Some(d) => format!(
                "The prominent object at rows {}-{} looks like the answer.",
                d.row0,
                d.row0 + d.height - 1
            ),
            None => "The prominent object looks like the answer.".to_owned(),
        };
        [first, format!("{} {TERMINATOR}", self.decoy())]
    }

    fn classify(&self, line: &str) -> LineKind {
        let [on1, on2] = self.on_target_steps();
        let [de1, de2] = self.decoy_steps();
        if line == on1 || line == on2 {
            LineKind::OnTarget
        } else if line == de1 || line == de2 {
            LineKind::Decoy
        } else if line.starts_with("Survey part ") {
            LineKind::Exploratory
        } else {
            LineKind::Other
        }
    }

    fn map_for(&self, kind: LineKind) -> AttentionGrid {
        let (d, t) = match kind {
            LineKind::Descriptive | LineKind::Exploratory => (DESC_DISTRACTOR, DESC_TARGET),
            LineKind::OnTarget | LineKind::Other => (QUESTION_DISTRACTOR, QUESTION_TARGET),
            LineKind::Decoy => (DECOY_DISTRACTOR, DECOY_TARGET),
        };
        let (h, w) = self.grid_shape;
        let mut values = vec![BASE; h * w];
        for (r, c) in &self.distractor_cells {
            values[r * w + c] += d;
        }
        for (r, c) in &self.target_cells {
            values[r * w + c] += t;
        }
        AttentionGrid::new(h, w, values).expect("mock maps are positive")
    }

    fn mean_logprob(&self, text: &str) -> f64 {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let total: f64 = lines
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let offset = match self.classify(line) {
                    LineKind::OnTarget => ON_TARGET_OFFSET,
                    LineKind::Decoy => DECOY_OFFSET,
                    _ => OFF_TARGET_OFFSET,
                };
                -STEP_DECAY * (i + 1) as f64 - offset
            })
            .sum();
        total / lines.len() as f64
    }
}

fn bounding(cells: &BTreeSet<(usize, usize)>) -> Rect {
    let r0 = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let r1 = cells.iter().map(|c| c.0).max().unwrap_or(0);
    let c0 = cells.iter().map(|c| c.1).min().unwrap_or(0);
    let c1 = cells.iter().map(|c| c.1).max().unwrap_or(0);
    Rect::new(r0, c0, r1 - r0 + 1, c1 - c0 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LineKind {
    Descriptive,
    Exploratory,
    OnTarget,
    Decoy,
    Other,
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// FNV-1a followed by the splitmix64 finalizer, mapped to [0, 1).
fn unit_hash(key: &str) -> f64 {
    let mut z = fnv1a(key);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic stand-in for a vision-language model over synthetic scenes.
#[derive(Debug)]
pub struct MockBackend {
    scenes: RwLock<HashMap<String, SyntheticScene>>,
    descriptive_prompt: String,
    cache: DescribeCache,
    attention_calls: AtomicU64,
    generate_calls: AtomicU64,
    generated_tokens: AtomicU64,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::with_descriptive_prompt(DEFAULT_DESCRIPTIVE_PROMPT)
    }

    pub fn with_descriptive_prompt(prompt: impl Into<String>) -> Self {
        Self {
            scenes: RwLock::new(HashMap::new()),
            descriptive_prompt: prompt.into(),
            cache: DescribeCache::default(),
            attention_calls: AtomicU64::new(0),
            generate_calls: AtomicU64::new(0),
            generated_tokens: AtomicU64::new(0),
        }
    }

    /// Adds a scene and returns the handle that addresses it.
    pub fn register(&self, scene: SyntheticScene) -> ImageHandle {
        let handle = scene.image_handle();
        self.scenes.write().unwrap().insert(handle.id.clone(), scene);
        handle
    }

    pub fn with_scene(scene: SyntheticScene) -> (Self, ImageHandle) {
        let backend = Self::new();
        let handle = backend.register(scene);
        (backend, handle)
    }

    /// Attention round-trips so far (cache hits are not counted).
    pub fn attention_calls(&self) -> u64 {
        self.attention_calls.load(Ordering::Relaxed)
    }

    pub fn generate_calls(&self) -> u64 {
        self.generate_calls.load(Ordering::Relaxed)
    }

    pub fn generated_tokens(&self) -> u64 {
        self.generated_tokens.load(Ordering::Relaxed)
    }

    fn scene(&self, image: &ImageHandle) -> Result<SyntheticScene> {
        self.scenes
            .read()
            .unwrap()
            .get(&image.id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("image {}", image.id)))
    }

    /// Grid cells touched by the view's pixel rectangle.
    pub fn view_cells(view: &ViewSpec) -> Rect {
        let p = view.pixel_rect();
        let patch = view.image.patch_px.max(1);
        let (h, w) = view.image.grid_shape;
        let r0 = (p.y / patch) as usize;
        let c0 = (p.x / patch) as usize;
        let r1 = ((p.y + p.height).div_ceil(patch) as usize).min(h);
        let c1 = ((p.x + p.width).div_ceil(patch) as usize).min(w);
        Rect::new(r0, c0, r1.saturating_sub(r0).max(1), c1.saturating_sub(c0).max(1))
    }

    fn check_text(text: &str) -> Result<()> {
        if text.trim().is_empty() {
            return Err(invalid("text must be non-empty"));
        }
        if text.len() > MAX_TEXT_BYTES {
            return Err(Error::TextTooLong {
                len: text.len(),
                limit: MAX_TEXT_BYTES,
            });
        }
        Ok(())
    }
}

impl Backend for MockBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps {
            supports_attention: true,
            supports_logprob: true,
            deterministic: true,
        }
    }

    fn attention_for(&self, view: &ViewSpec, text: &str) -> Result<AttentionGrid> {
        Self::check_text(text)?;
        let scene = self.scene(&view.image)?;
        self.attention_calls.fetch_add(1, Ordering::Relaxed);
        if text == self.descriptive_prompt {
            return Ok(scene.map_for(LineKind::Descriptive));
        }
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (h, w) = scene.grid_shape;
        let mut acc = vec![0.0; h * w];
        for line in &lines {
            let m = scene.map_for(scene.classify(line));
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let n = lines.len() as f64;
        AttentionGrid::new(h, w, acc.into_iter().map(|v| v / n).collect())
    }

    fn generate(
        &self,
        view: &ViewSpec,
        _question: &str,
        chain: &[ReasoningStep],
        temperature: f64,
        max_steps: usize,
    ) -> Result<Generation> {
        if max_steps == 0 {
            return Err(invalid("max_steps must be >= 1"));
        }
        if max_steps > MAX_STEPS_LIMIT {
            return Err(Error::GenerationLimit {
                requested: max_steps,
                limit: MAX_STEPS_LIMIT,
            });
        }
        let scene = self.scene(&view.image)?;
        let cells = Self::view_cells(view);
        let chain_texts: Vec<&str> = chain.iter().map(ReasoningStep::text).collect();
        let [on1, on2] = scene.on_target_steps();
        let [de1, de2] = scene.decoy_steps();

        let texts: Vec<String> = if chain_texts.last() == Some(&de1.as_str()) {
            vec![de2]
        } else if scene.resolves(&cells) {
            if chain_texts.contains(&on1.as_str()) {
                vec![on2]
            } else {
                vec![on1, on2]
            }
        } else {
            let key = format!("{}|{:?}|{}|{:016x}", scene.seed, cells, chain_texts.join("\n"), temperature.to_bits());
            let p_decoy = DECOY_PROB_AT_MAX_T * ((temperature - 0.4) / 0.6).clamp(0.0, 1.0);
            if unit_hash(&key) < p_decoy {
                vec![de1, de2]
            } else {
                (1..=max_steps)
                    .map(|i| {
                        format!(
                            "Survey part {} of the image for details relevant to the question.",
                            chain.len() + i
                        )
                    })
                    .collect()
            }
        };

        let steps = texts
            .into_iter()
            .take(max_steps)
            .map(ReasoningStep::new)
            .collect::<Result<Vec<_>>>()?;
        let mut prefix = chain_texts.join("\n");
        let mut prefix_mean_logprobs = Vec::with_capacity(steps.len());
        for s in &steps {
            if !prefix.is_empty() {
                prefix.push('\n');
            }
            prefix.push_str(s.text());
            prefix_mean_logprobs.push(scene.mean_logprob(&prefix));
        }
        let tokens = approx_tokens(&steps);
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        self.generated_tokens.fetch_add(tokens, Ordering::Relaxed);
        Ok(Generation {
            terminator_seen: steps.iter().any(ReasoningStep::has_terminator),
            steps,
            prefix_mean_logprobs,
            generated_tokens: tokens,
        })
    }

    fn prefix_mean_logprob(&self, view: &ViewSpec, _question: &str, text: &str) -> Result<f64> {
        Self::check_text(text)?;
        Ok(self.scene(&view.image)?.mean_logprob(text))
    }

    fn describe_cache(&self) -> &DescribeCache {
        &self.cache
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::relative_attention;
    use crate::backend::Region;
    use crate::focus::PixelRect;

    fn scene() -> SyntheticScene {
        SyntheticScene::parse("grid=8x8; target=5,5,2,2; distractor=0,0,2,2; answer=amber lantern; seed=3").unwrap()
    }

    fn crop(h: &ImageHandle, r: Rect) -> ViewSpec {
        let p = h.patch_px;
        ViewSpec {
            image: h.clone(),
            region: Region::Pixels(PixelRect {
                x: r.col0 as u32 * p,
                y: r.row0 as u32 * p,
                width: r.width as u32 * p,
                height: r.height as u32 * p,
            }),
        }
    }

    #[test]
    fn descriptive_rule_table() {
        let (m, h) = MockBackend::with_scene(scene());
        let g = m.describe_attention(&h, DEFAULT_DESCRIPTIVE_PROMPT).unwrap();
        assert_eq!(g.get(0, 0), 6.0);
        assert_eq!(g.get(5, 5), 3.0);
        assert_eq!(g.get(3, 3), 1.0);
    }

    #[test]
    fn question_rule_table_concentrates_on_target() {
        let (m, h) = MockBackend::with_scene(scene());
        let v = ViewSpec::original(&h);
        let q = m.attention_for(&v, "What is the object in the corner?").unwrap();
        assert_eq!((q.get(0, 1), q.get(6, 6), q.get(2, 4)), (3.0, 7.0, 1.0));
        let d = m.describe_attention(&h, DEFAULT_DESCRIPTIVE_PROMPT).unwrap();
        let rel = relative_attention(&q, &d, 1e-10).unwrap();
        let (r, c) = (rel.argmax() / 8, rel.argmax() % 8);
        assert!(m.scene(&h).unwrap().target_cells.contains(&(r, c)));
    }

    #[test]
    fn describe_is_cached_per_image() {
        let m = MockBackend::new();
        let a = m.register(scene());
        let b = m.register(SyntheticScene::random(9));
        let g1 = m.describe_attention(&a, DEFAULT_DESCRIPTIVE_PROMPT).unwrap();
        let g2 = m.describe_attention(&a, DEFAULT_DESCRIPTIVE_PROMPT).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(m.attention_calls(), 1);
        m.describe_attention(&b, DEFAULT_DESCRIPTIVE_PROMPT).unwrap();
        assert_eq!(m.attention_calls(), 2);
        assert_eq!(m.describe_cache().len(), 2);
    }

    #[test]
    fn resolved_view_answers() {
        let (m, h) = MockBackend::with_scene(scene());
        let view = crop(&h, Rect::new(4, 4, 4, 4));
        let g = m.generate(&view, "q", &[], 0.9, 5).unwrap();
        assert_eq!(g.steps.len(), 2);
        assert!(g.terminator_seen);
        assert!(g.steps[1].text().contains("amber lantern"));
        // on-target lines: -0.3 then mean(-0.3, -0.5)
        assert!((g.prefix_mean_logprobs[0] + 0.3).abs() < 1e-12);
        assert!((g.prefix_mean_logprobs[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn unresolved_view_explores_at_low_temperature() {
        let (m, h) = MockBackend::with_scene(scene());
        let view = crop(&h, Rect::new(0, 0, 4, 4));
        let g = m.generate(&view, "q", &[], 0.4, 5).unwrap();
        assert_eq!(g.steps.len(), 5);
        assert!(!g.terminator_seen);
        assert!(g.steps.iter().all(|s| s.text().starts_with("Survey part")));
    }

    #[test]
    fn truncation_and_limits() {
        let (m, h) = MockBackend::with_scene(scene());
        let v = ViewSpec::original(&h);
        assert_eq!(m.generate(&v, "q", &[], 0.5, 1).unwrap().steps.len(), 1);
        assert!(matches!(m.generate(&v, "q", &[], 0.5, 65), Err(Error::GenerationLimit { .. })));
        assert!(m.attention_for(&v, "").is_err());
        assert!(matches!(
            m.attention_for(&v, &"x".repeat(MAX_TEXT_BYTES + 1)),
            Err(Error::TextTooLong { .. })
        ));
    }

    #[test]
    fn logprob_rule() {
        let (m, h) = MockBackend::with_scene(scene());
        let v = ViewSpec::original(&h);
        let on1 = scene().on_target_steps()[0].clone();
        assert!((m.prefix_mean_logprob(&v, "q", &on1).unwrap() + 0.3).abs() < 1e-12);
        assert!(m.prefix_mean_logprob(&v, "q", "").is_err());
    }

    #[test]
    fn decoy_never_matches_answer() {
        for seed in 0..200 {
            let s = SyntheticScene::random(seed);
            assert_ne!(s.decoy(), s.answer);
            assert!(s.target_cells.is_disjoint(&s.distractor_cells));
        }
    }

    #[test]
    fn parse_errors() {
        assert!(SyntheticScene::parse("grid=4x4; target=3,3,2,2; answer=x").is_err());
        assert!(SyntheticScene::parse("grid=4x4; target=0,0,1,1").is_err());
        assert!(SyntheticScene::parse("bogus=1").is_err());
        assert_eq!(SyntheticScene::parse("seed=5").unwrap(), SyntheticScene::random(5));
    }
}
