//! Dual-foresight scoring of candidate samples.

use serde::{Deserialize, Serialize};

use crate::attention::{argmax, cosine_sim, iou_top_fraction, softmax, AttentionGrid, NormalizedGrid};
use crate::error::{invalid, Result};

/// Literal the model emits when its chain has reached an answer.
pub const TERMINATOR: &str = "REASONING_COMPLETE";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReasoningStep(String);

impl ReasoningStep {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(invalid("reasoning step text is empty"));
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn has_terminator(&self) -> bool {
        self.0.contains(TERMINATOR)
    }
}

impl std::fmt::Display for ReasoningStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Joins steps into the single text the backend scores or attends over.
pub fn join_steps<'a>(steps: impl IntoIterator<Item = &'a ReasoningStep>) -> String {
    steps
        .into_iter()
        .map(ReasoningStep::text)
        .collect::<Vec<_>>()
        .join("\n")
}

/// One candidate continuation of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub steps: Vec<ReasoningStep>,
    /// Mean log-prob of the chain plus the first `j` steps, for `j = 1..=steps.len()`.
    pub prefix_mean_logprobs: Vec<f64>,
    pub terminator_seen: bool,
    /// Relative attention of the sample text against the original image.
    pub attention_vs_original: NormalizedGrid,
    pub temperature_used: f64,
    pub generated_tokens: u64,
}

impl Sample {
    pub fn text(&self) -> String {
        join_steps(&self.steps)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(invalid("sample has no steps"));
        }
        if self.steps.len() != self.prefix_mean_logprobs.len() {
            return Err(invalid(format!(
                "sample has {} steps but {} prefix log-probs",
                self.steps.len(),
                self.prefix_mean_logprobs.len()
            )));
        }
        if let Some(p) = self.prefix_mean_logprobs.iter().find(|p| p.is_nan() || **p > 0.0) {
            return Err(invalid(format!("prefix log-prob {p} is not <= 0")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub e_att: Vec<f64>,
    pub e_prob: Vec<f64>,
    pub combined: Vec<f64>,
    pub selected_index: usize,
}

/// How the progression score averages over a sample's steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProgressionDivisor {
    /// Divide by the number of steps the sample actually has.
    #[default]
    Realized,
    /// Divide by the configured foresight length even for short samples.
    Strict(usize),
}

/// `0.5 * cos + 0.5 * IoU` of the top-`fraction` cells.
pub fn visual_focus_score(
    a_rel_question: &AttentionGrid,
    a_rel_sample: &AttentionGrid,
    fraction: f64,
) -> Result<f64> {
    let cos = cosine_sim(a_rel_question, a_rel_sample)?;
    let iou = iou_top_fraction(a_rel_question, a_rel_sample, fraction)?;
    Ok(0.5 * cos + 0.5 * iou)
}

/// Average gain of each prefix's mean log-prob over the chain baseline `p0`.
pub fn progression_score(p0: f64, prefix_mean_logprobs: &[f64], divisor: ProgressionDivisor) -> Result<f64> {
    if prefix_mean_logprobs.is_empty() {
        return Err(invalid("progression score needs at least one prefix"));
    }
    let gain: f64 = prefix_mean_logprobs.iter().map(|p| p - p0).sum();
    let n = match divisor {
        ProgressionDivisor::Realized => prefix_mean_logprobs.len(),
        ProgressionDivisor::Strict(l) if l >= prefix_mean_logprobs.len() => l,
        ProgressionDivisor::Strict(l) => {
            return Err(invalid(format!(
                "sample has {} prefixes, more than foresight length {l}",
                prefix_mean_logprobs.len()
            )))
        }
    };
    Ok(gain / n as f64)
}

/// `lambda * softmax(e_att) + (1 - lambda) * softmax(e_prob)`, then argmax.
pub fn combine_and_select(e_att: &[f64], e_prob: &[f64], lambda: f64) -> Result<ScoreBundle> {
    if e_att.is_empty() || e_att.len() != e_prob.len() {
        return Err(invalid(format!(
            "score vectors must be equal and non-empty, got {} and {}",
            e_att.len(),
            e_prob.len()
        )));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(invalid(format!("lambda must be in (0, 1], got {lambda}")));
    }
    if e_att.iter().chain(e_prob).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite score"));
    }
    let att = softmax(e_att);
    let prob = softmax(e_prob);
    let combined: Vec<f64> = att
        .iter()
        .zip(&prob)
        .map(|(a, p)| lambda * a + (1.0 - lambda) * p)
        .collect();
    let selected_index = argmax(&combined);
    Ok(ScoreBundle {
        e_att: e_att.to_vec(),
        e_prob: e_prob.to_vec(),
        combined,
        selected_index,
    })
}
