//! What the engine needs from a vision-language model.
//!
//! Attention grids are always reported over the original image's grid,
//! whatever view the request was made against.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::attention::{relative_attention, AttentionGrid};
use crate::error::{invalid, Result};
use crate::focus::{grid_rect_to_pixels, FocusState, PixelRect};
use crate::scoring::{join_steps, ReasoningStep, Sample, TERMINATOR};

pub mod http;
pub mod mock;

pub use http::{HttpBackend, HttpOptions};
pub use mock::{MockBackend, SyntheticScene};

pub const DEFAULT_DESCRIPTIVE_PROMPT: &str = "Describe the image in detail";

pub const MIN_TEMPERATURE: f64 = 0.4;
pub const MAX_TEMPERATURE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageHandle {
    pub id: String,
    /// `(H, W)` in patch cells.
    pub grid_shape: (usize, usize),
    /// `(h_px, w_px)`.
    pub pixel_shape: (u32, u32),
    pub patch_px: u32,
}

impl ImageHandle {
    pub fn new(id: impl Into<String>, grid_shape: (usize, usize), pixel_shape: (u32, u32), patch_px: u32) -> Result<Self> {
        let handle = Self {
            id: id.into(),
            grid_shape,
            pixel_shape,
            patch_px,
        };
        let expect = |px: u32| (px as usize).div_ceil(patch_px.max(1) as usize);
        if patch_px == 0
            || grid_shape.0 == 0
            || grid_shape.1 == 0
            || grid_shape.0.abs_diff(expect(pixel_shape.0)) > 1
            || grid_shape.1.abs_diff(expect(pixel_shape.1)) > 1
        {
            return Err(invalid(format!(
                "grid {grid_shape:?} inconsistent with {pixel_shape:?} px at patch {patch_px}"
            )));
        }
        Ok(handle)
    }

    /// Square patches over a grid, `patch_px` pixels per cell.
    pub fn synthetic(id: impl Into<String>, grid_shape: (usize, usize), patch_px: u32) -> Self {
        Self {
            id: id.into(),
            grid_shape,
            pixel_shape: (grid_shape.0 as u32 * patch_px, grid_shape.1 as u32 * patch_px),
            patch_px,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Original,
    Pixels(PixelRect),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub image: ImageHandle,
    pub region: Region,
}

impl ViewSpec {
    pub fn original(image: &ImageHandle) -> Self {
        Self {
            image: image.clone(),
            region: Region::Original,
        }
    }

    /// The pixel view for a focus state, aspect-corrected to the image.
    pub fn for_focus(image: &ImageHandle, focus: &FocusState) -> Result<Self> {
        let region = match focus.rect() {
            None => Region::Original,
            Some(rect) => {
                let (h_px, w_px) = image.pixel_shape;
                Region::Pixels(grid_rect_to_pixels(&rect, image.patch_px, w_px, h_px)?)
            }
        };
        Ok(Self {
            image: image.clone(),
            region,
        })
    }

    pub fn pixel_rect(&self) -> PixelRect {
        match self.region {
            Region::Original => PixelRect {
                x: 0,
                y: 0,
                width: self.image.pixel_shape.1,
                height: self.image.pixel_shape.0,
            },
            Region::Pixels(r) => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCaps {
    pub supports_attention: bool,
    pub supports_logprob: bool,
    pub deterministic: bool,
}

/// Raw output of one generation call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub steps: Vec<ReasoningStep>,
    pub prefix_mean_logprobs: Vec<f64>,
    pub terminator_seen: bool,
    pub generated_tokens: u64,
}

/// Descriptive-prompt attention per `(image id, prompt)`.
#[derive(Debug, Default)]
pub struct DescribeCache {
    entries: Mutex<HashMap<(String, String), AttentionGrid>>,
}

impl DescribeCache {
    pub fn get_or_fetch(
        &self,
        image_id: &str,
        prompt: &str,
        fetch: impl FnOnce() -> Result<AttentionGrid>,
    ) -> Result<AttentionGrid> {
        let key = (image_id.to_owned(), prompt.to_owned());
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        // Fetch outside the lock; a racing duplicate fetch is harmless.
        let grid = fetch()?;
        self.entries.lock().unwrap().entry(key).or_insert(grid.clone());
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait Backend: Send + Sync {
    fn caps(&self) -> BackendCaps;

    /// Raw text-to-image attention, in original-image coordinates.
    fn attention_for(&self, view: &ViewSpec, text: &str) -> Result<AttentionGrid>;

    fn generate(
        &self,
        view: &ViewSpec,
        question: &str,
        chain: &[ReasoningStep],
        temperature: f64,
        max_steps: usize,
    ) -> Result<Generation>;

    /// Mean token log-prob of `text` (the chain, possibly extended).
    fn prefix_mean_logprob(&self, view: &ViewSpec, question: &str, text: &str) -> Result<f64>;

    fn describe_cache(&self) -> &DescribeCache;

    /// Attention of the descriptive prompt over the whole image, cached.
    fn describe_attention(&self, image: &ImageHandle, prompt: &str) -> Result<AttentionGrid> {
        self.describe_cache()
            .get_or_fetch(&image.id, prompt, || self.attention_for(&ViewSpec::original(image), prompt))
    }
}

/// Generates one candidate and attaches its relative attention against the
/// original image.
#[allow(clippy::too_many_arguments)]
pub fn generate_sample(
    backend: &dyn Backend,
    view: &ViewSpec,
    question: &str,
    chain: &[ReasoningStep],
    temperature: f64,
    max_steps: usize,
    desc: &AttentionGrid,
    epsilon: f64,
) -> Result<Sample> {
    if max_steps == 0 {
        return Err(invalid("max_steps must be >= 1"));
    }
    if !(MIN_TEMPERATURE - 1e-9..=MAX_TEMPERATURE + 1e-9).contains(&temperature) {
        return Err(invalid(format!("temperature {temperature} outside [0.4, 1.0]")));
    }
    let mut g = backend.generate(view, question, chain, temperature, max_steps)?;
    g.steps.truncate(max_steps);
    g.prefix_mean_logprobs.truncate(max_steps);
    let text = join_steps(&g.steps);
    let raw = backend.attention_for(&ViewSpec::original(&view.image), &text)?;
    let sample = Sample {
        terminator_seen: g.steps.iter().any(|s| s.text().contains(TERMINATOR)),
        steps: g.steps,
        prefix_mean_logprobs: g.prefix_mean_logprobs,
        attention_vs_original: relative_attention(&raw, desc, epsilon)?,
        temperature_used: temperature,
        generated_tokens: g.generated_tokens,
    };
    sample.validate()?;
    Ok(sample)
}

/// Whitespace token count, used when a backend does not report one.
pub fn approx_tokens<'a>(steps: impl IntoIterator<Item = &'a ReasoningStep>) -> u64 {
    steps
        .into_iter()
        .map(|s| s.text().split_whitespace().count() as u64)
        .sum()
}
