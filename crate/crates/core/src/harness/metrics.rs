use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetItem;
use crate::backend::mock::fnv1a;
use crate::backend::{Backend, ImageHandle};
use crate::error::Result;
use crate::orchestrator::{run_cofft, EngineConfig, Example, StopReason};

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Exact match after trimming, casefolding and collapsing whitespace. With
/// choices, the bare letter of the correct choice is accepted too.
pub fn score_pass1(predicted: &str, item: &DatasetItem) -> bool {
    let p = normalize(predicted);
    if p == normalize(&item.answer) {
        return true;
    }
    let Some(choices) = &item.choices else {
        return false;
    };
    let Some(idx) = choices.iter().position(|c| c == &item.answer) else {
        return false;
    };
    match (idx < 26).then(|| (b'a' + idx as u8) as char) {
        Some(letter) => p.len() == 1 && p.starts_with(letter),
        None => false,
    }
}

pub fn estimate_flops(n_tokens: u64, params: f64) -> f64 {
    6.0 * n_tokens as f64 * params
}

/// Three significant digits with a signed two-digit exponent: `2.38e+14`.
pub fn format_sci(x: f64) -> String {
    let s = format!("{x:.2e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.unsigned_abs())
}

/// PRNG seed for one item, independent of evaluation order.
pub fn item_seed(seed: u64, id: &str) -> u64 {
    fnv1a(&format!("{seed}/{id}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub predicted: Option<String>,
    pub correct: bool,
    pub n_tokens: u64,
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub pass_at_1: f64,
    pub correct: usize,
    pub total_items: usize,
    pub total_tokens: u64,
    pub params: f64,
    pub flops_estimate: f64,
    pub flops: String,
    pub items: Vec<ItemResult>,
}

impl MetricsReport {
    pub fn from_results(seed: u64, params: f64, items: Vec<ItemResult>) -> Self {
        let correct = items.iter().filter(|r| r.correct).count();
        let total_tokens = items.iter().map(|r| r.n_tokens).sum();
        let flops_estimate = estimate_flops(total_tokens, params);
        Self {
            seed,
            pass_at_1: if items.is_empty() { 0.0 } else { correct as f64 / items.len() as f64 },
            correct,
            total_items: items.len(),
            total_tokens,
            params,
            flops_estimate,
            flops: format_sci(flops_estimate),
            items,
        }
    }
}

/// Runs every item once. `resolve` maps an item to a handle the backend
/// knows. Failed items count as wrong and keep their error text.
pub fn evaluate_dataset<F>(
    items: &[DatasetItem],
    config: &EngineConfig,
    backend: &dyn Backend,
    resolve: F,
    params: f64,
    parallel: bool,
) -> Result<MetricsReport>
where
    F: Fn(&DatasetItem) -> Result<ImageHandle> + Sync,
{
    config.validate()?;
    let eval = |item: &DatasetItem| {
        let failed = |error: String, n_tokens| ItemResult {
            id: item.id.clone(),
            predicted: None,
            correct: false,
            n_tokens,
            stop_reason: None,
            error: Some(error),
        };
        let image = match resolve(item) {
            Ok(h) => h,
            Err(e) => return failed(e.to_string(), 0),
        };
        let example = Example {
            image,
            question: item.question.clone(),
        };
        let cfg = EngineConfig {
            seed: item_seed(config.seed, &item.id),
            ..config.clone()
        };
        match run_cofft(&example, &cfg, backend) {
            Ok(run) => ItemResult {
                id: item.id.clone(),
                correct: score_pass1(&run.answer, item),
                predicted: Some(run.answer),
                n_tokens: run.trace.n_tokens,
                stop_reason: Some(run.stop_reason),
                error: None,
            },
            Err(f) => failed(f.source.to_string(), f.trace.n_tokens),
        }
    };
    let results = if parallel {
        items.par_iter().map(eval).collect()
    } else {
        items.iter().map(eval).collect()
    };
    Ok(MetricsReport::from_results(config.seed, params, results))
}
