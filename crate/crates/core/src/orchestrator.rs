//! The foresight-focus loop.
//!
//! Each iteration draws `k` temperatures, generates `k` candidate
//! continuations of up to `l` steps from the current view, appends the
//! first step of the best-scoring candidate to the chain, and then moves
//! the view to the most promising window (or back to the full image).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{argmax, relative_attention, AttentionGrid, NormalizedGrid, DEFAULT_EPSILON, DEFAULT_IOU_FRACTION};
use crate::backend::{generate_sample, Backend, ImageHandle, ViewSpec, DEFAULT_DESCRIPTIVE_PROMPT};
use crate::error::{invalid, Error, Result};
use crate::focus::{adjust_focus, enumerate_windows, FocusState, Rect};
use crate::scheduler::SchedulerState;
use crate::scoring::{
    combine_and_select, join_steps, progression_score, visual_focus_score, ProgressionDivisor, ReasoningStep,
    ScoreBundle, TERMINATOR,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Samples per iteration.
    pub k: usize,
    /// Foresight length: maximum steps per sample.
    pub l: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub iou_fraction: f64,
    pub max_reasoning_steps: usize,
    pub seed: u64,
    /// Select samples by progression score alone.
    pub ablation_no_dfd: bool,
    /// Never move the view off the original image.
    pub ablation_no_vfa: bool,
    pub descriptive_prompt: String,
    /// Divide the progression score by `l` rather than the sample's length.
    pub strict_l_divisor: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: 4,
            l: 5,
            lambda: 0.3,
            alpha: 0.3,
            epsilon: DEFAULT_EPSILON,
            iou_fraction: DEFAULT_IOU_FRACTION,
            max_reasoning_steps: 10,
            seed: 0,
            ablation_no_dfd: false,
            ablation_no_vfa: false,
            descriptive_prompt: DEFAULT_DESCRIPTIVE_PROMPT.to_owned(),
            strict_l_divisor: false,
        }
    }
}

impl EngineConfig {
    /// Single-sample decoding on the original image.
    pub fn greedy() -> Self {
        Self {
            k: 1,
            ablation_no_vfa: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(invalid(msg)) };
        check(self.k >= 1, "k must be >= 1")?;
        check(self.l >= 1, "l must be >= 1")?;
        check(self.lambda > 0.0 && self.lambda <= 1.0, "lambda must be in (0, 1]")?;
        check(self.alpha > 0.0 && self.alpha <= 1.0, "alpha must be in (0, 1]")?;
        check(self.epsilon >= 0.0 && self.epsilon.is_finite(), "epsilon must be >= 0")?;
        check(
            self.iou_fraction > 0.0 && self.iou_fraction <= 1.0,
            "iou_fraction must be in (0, 1]",
        )?;
        check(self.max_reasoning_steps >= 1, "max_reasoning_steps must be >= 1")?;
        check(!self.descriptive_prompt.trim().is_empty(), "descriptive prompt is empty")
    }

    fn divisor(&self) -> ProgressionDivisor {
        if self.strict_l_divisor {
            ProgressionDivisor::Strict(self.l)
        } else {
            ProgressionDivisor::Realized
        }
    }
}

/// An image and the question asked about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub image: ImageHandle,
    pub question: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub steps: Vec<ReasoningStep>,
    /// Mean log-prob of the chain so far; 0 while it is empty.
    pub p0: f64,
    pub focus: FocusState,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Terminator,
    MaxSteps,
    Converged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropDecision {
    Crop,
    Original,
    /// Focus adjustment switched off.
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub decision: CropDecision,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rect: Option<Rect>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_rect: Option<Rect>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu_best: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu_global: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a_crop: Option<AttentionGrid>,
}

impl CropRecord {
    fn disabled() -> Self {
        Self {
            decision: CropDecision::Disabled,
            rect: None,
            best_rect: None,
            mu_best: None,
            mu_global: None,
            beta: None,
            sigma: None,
            a_crop: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub text: String,
    pub steps: Vec<String>,
    pub p_prefix: Vec<f64>,
    pub temperature: f64,
    pub n_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub temperatures: Vec<f64>,
    pub samples: Vec<SampleRecord>,
    pub e_att: Vec<f64>,
    pub e_prob: Vec<f64>,
    pub combined: Vec<f64>,
    pub selected: usize,
    pub crop: CropRecord,
    pub appended_step: String,
    /// Tokens generated so far, this iteration included.
    pub n_tokens: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub iterations: Vec<IterationRecord>,
    pub n_tokens: u64,
    pub stop_reason: Option<StopReason>,
    pub answer: Option<String>,
}

impl RunTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Crop rects chosen over the run, in order.
    pub fn crops(&self) -> impl Iterator<Item = Rect> + '_ {
        self.iterations.iter().filter_map(|it| match it.crop.decision {
            CropDecision::Crop => it.crop.rect,
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub answer: String,
    pub chain: Vec<ReasoningStep>,
    pub stop_reason: StopReason,
    pub trace: RunTrace,
}

/// A run that failed midway, with everything recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("run failed after {} iterations: {source}", trace.iterations.len())]
pub struct RunFailure {
    #[source]
    pub source: Error,
    pub trace: RunTrace,
}

impl From<Error> for RunFailure {
    fn from(source: Error) -> Self {
        Self {
            source,
            trace: RunTrace::default(),
        }
    }
}

/// Terminator beats the step limit, which beats convergence (two
/// consecutive byte-identical appended steps).
pub fn stopping_decision(state: &ChainState, config: &EngineConfig) -> Option<StopReason> {
    let last = state.steps.last()?;
    if last.has_terminator() {
        return Some(StopReason::Terminator);
    }
    if state.iteration >= config.max_reasoning_steps {
        return Some(StopReason::MaxSteps);
    }
    match state.steps.as_slice() {
        [.., prev, last] if prev == last => Some(StopReason::Converged),
        _ => None,
    }
}

/// Chooses a sample, honouring the progression-only ablation.
pub fn select_with_ablation(e_att: &[f64], e_prob: &[f64], config: &EngineConfig) -> Result<ScoreBundle> {
    let mut bundle = combine_and_select(e_att, e_prob, config.lambda)?;
    if config.ablation_no_dfd {
        bundle.selected_index = argmax(e_prob);
    }
    Ok(bundle)
}

/// Final answer: the last step without the terminator literal.
pub fn extract_answer(chain: &[ReasoningStep]) -> String {
    chain
        .last()
        .map(|s| s.text().replace(TERMINATOR, "").trim().to_owned())
        .unwrap_or_default()
}

struct Run<'a> {
    example: &'a Example,
    config: &'a EngineConfig,
    backend: &'a dyn Backend,
    desc: AttentionGrid,
    question_rel: NormalizedGrid,
    windows: Vec<Rect>,
    trace: RunTrace,
}

impl Run<'_> {
    fn iterate(&mut self, state: &mut ChainState, scheduler: &mut SchedulerState, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = self.config;
        let image = &self.example.image;
        let view = ViewSpec::for_focus(image, &state.focus)?;

        let temperatures: Vec<f64> = (0..cfg.k).map(|_| scheduler.draw(rng.random::<f64>())).collect();
        let samples = temperatures
            .iter()
            .map(|&t| {
                generate_sample(
                    self.backend,
                    &view,
                    &self.example.question,
                    &state.steps,
                    t,
                    cfg.l,
                    &self.desc,
                    cfg.epsilon,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let e_att = samples
            .iter()
            .map(|s| visual_focus_score(&self.question_rel, &s.attention_vs_original, cfg.iou_fraction))
            .collect::<Result<Vec<_>>>()?;
        let e_prob = samples
            .iter()
            .map(|s| progression_score(state.p0, &s.prefix_mean_logprobs, cfg.divisor()))
            .collect::<Result<Vec<_>>>()?;
        let bundle = select_with_ablation(&e_att, &e_prob, cfg)?;
        let chosen = &samples[bundle.selected_index];

        let appended = chosen.steps[0].clone();
        state.steps.push(appended.clone());
        state.iteration += 1;
        let chain_text = join_steps(&state.steps);
        state.p0 = self
            .backend
            .prefix_mean_logprob(&view, &self.example.question, &chain_text)?;

        let crop = if cfg.ablation_no_vfa {
            CropRecord::disabled()
        } else {
            let chain_raw = self.backend.attention_for(&ViewSpec::original(image), &chain_text)?;
            let chain_rel = relative_attention(&chain_raw, &self.desc, cfg.epsilon)?;
            let (focus, comp) = adjust_focus(
                &self.question_rel,
                &chain_rel,
                &chosen.attention_vs_original,
                cfg.alpha,
                &self.windows,
            )?;
            state.focus = focus;
            CropRecord {
                decision: if focus.rect().is_some() {
                    CropDecision::Crop
                } else {
                    CropDecision::Original
                },
                rect: focus.rect(),
                best_rect: Some(comp.best_rect),
                mu_best: Some(comp.mu_best),
                mu_global: Some(comp.mu_global),
                beta: Some(comp.beta),
                sigma: Some(comp.sigma),
                a_crop: Some(comp.a_crop),
            }
        };

        let generated: u64 = samples.iter().map(|s| s.generated_tokens).sum();
        self.trace.n_tokens += generated;
        self.trace.iterations.push(IterationRecord {
            t: state.iteration,
            temperatures,
            samples: samples
                .iter()
                .map(|s| SampleRecord {
                    text: s.text(),
                    steps: s.steps.iter().map(|x| x.text().to_owned()).collect(),
                    p_prefix: s.prefix_mean_logprobs.clone(),
                    temperature: s.temperature_used,
                    n_tokens: s.generated_tokens,
                })
                .collect(),
            e_att: bundle.e_att,
            e_prob: bundle.e_prob,
            combined: bundle.combined,
            selected: bundle.selected_index,
            crop,
            appended_step: appended.text().to_owned(),
            n_tokens: self.trace.n_tokens,
        });
        Ok(())
    }
}

/// Runs the loop to completion on one example.
pub fn run_cofft(example: &Example, config: &EngineConfig, backend: &dyn Backend) -> Result<RunResult, RunFailure> {
    config.validate()?;
    let caps = backend.caps();
    if !(caps.supports_attention && caps.supports_logprob) {
        return Err(invalid("backend must support attention and log-probs").into());
    }
    if example.question.trim().is_empty() {
        return Err(invalid("question is empty").into());
    }
    let image = &example.image;
    let setup = || -> Result<(AttentionGrid, NormalizedGrid, Vec<Rect>)> {
        let desc = backend.describe_attention(image, &config.descriptive_prompt)?;
        let q_raw = backend.attention_for(&ViewSpec::original(image), &example.question)?;
        let q_rel = relative_attention(&q_raw, &desc, config.epsilon)?;
        let windows = if config.ablation_no_vfa {
            Vec::new()
        } else {
            enumerate_windows(image.grid_shape)?
        };
        Ok((desc, q_rel, windows))
    };
    let (desc, question_rel, windows) = setup()?;

    let mut run = Run {
        example,
        config,
        backend,
        desc,
        question_rel,
        windows,
        trace: RunTrace::default(),
    };
    let mut state = ChainState {
        steps: Vec::new(),
        p0: 0.0,
        focus: FocusState::original(image.grid_shape),
        iteration: 0,
    };
    let mut scheduler = SchedulerState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let stop_reason = loop {
        if let Err(source) = run.iterate(&mut state, &mut scheduler, &mut rng) {
            return Err(RunFailure {
                source,
                trace: run.trace,
            });
        }
        if let Some(reason) = stopping_decision(&state, config) {
            break reason;
        }
    };
    let answer = extract_answer(&state.steps);
    let mut trace = run.trace;
    trace.stop_reason = Some(stop_reason);
    trace.answer = Some(answer.clone());
    Ok(RunResult {
        answer,
        chain: state.steps,
        stop_reason,
        trace,
    })
}
