//! Seeded synthetic scenes run under several engine configurations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::item_seed;
use crate::backend::mock::fnv1a;
use crate::backend::{MockBackend, SyntheticScene};
use crate::error::{invalid, Result};
use crate::orchestrator::{run_cofft, EngineConfig, Example};

pub const SCENE_QUESTION: &str = "What is the small object in the image?";

/// A run hits the target if some crop covers at least this share of it.
pub const HIT_COVERAGE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub name: String,
    pub engine: EngineConfig,
}

impl SuiteConfig {
    /// `full`, `no-dfd`, `no-vfa` or `greedy`, over a base config.
    pub fn named(name: &str, base: &EngineConfig) -> Result<Self> {
        let engine = match name {
            "full" => base.clone(),
            "no-dfd" => EngineConfig {
                ablation_no_dfd: true,
                ..base.clone()
            },
            "no-vfa" => EngineConfig {
                ablation_no_vfa: true,
                ..base.clone()
            },
            "greedy" => EngineConfig {
                k: 1,
                ablation_no_vfa: true,
                ..base.clone()
            },
            other => return Err(invalid(format!("unknown suite config {other:?}"))),
        };
        Ok(Self {
            name: name.to_owned(),
            engine,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub name: String,
    pub accuracy: f64,
    pub hit_rate: f64,
    pub correct: usize,
    pub hits: usize,
    pub failures: usize,
    pub total_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub n_scenes: usize,
    pub seed: u64,
    pub configs: Vec<ConfigOutcome>,
}

impl SuiteReport {
    pub fn get(&self, name: &str) -> Option<&ConfigOutcome> {
        self.configs.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct SceneOutcome {
    correct: bool,
    hit: bool,
    failed: bool,
    tokens: u64,
}

pub fn suite_scenes(n_scenes: usize, seed: u64) -> Vec<SyntheticScene> {
    (0..n_scenes)
        .map(|i| SyntheticScene::random(fnv1a(&format!("scene/{seed}/{i}"))))
        .collect()
}

fn run_scene(backend: &MockBackend, scene: &SyntheticScene, config: &EngineConfig, seed: u64) -> SceneOutcome {
    let image = scene.image_handle();
    let cfg = EngineConfig {
        seed: item_seed(seed, &image.id),
        ..config.clone()
    };
    let example = Example {
        image,
        question: SCENE_QUESTION.to_owned(),
    };
    match run_cofft(&example, &cfg, backend) {
        Ok(run) => SceneOutcome {
            correct: run.answer == scene.answer,
            hit: run.trace.crops().any(|r| scene.target_coverage(&r) >= HIT_COVERAGE),
            failed: false,
            tokens: run.trace.n_tokens,
        },
        Err(f) => SceneOutcome {
            correct: false,
            hit: f.trace.crops().any(|r| scene.target_coverage(&r) >= HIT_COVERAGE),
            failed: true,
            tokens: f.trace.n_tokens,
        },
    }
}

/// Runs every config on the same `n_scenes` scenes. Results do not depend
/// on `parallel`.
pub fn run_synthetic_suite(n_scenes: usize, seed: u64, configs: &[SuiteConfig], parallel: bool) -> Result<SuiteReport> {
    if n_scenes == 0 {
        return Err(invalid("n_scenes must be >= 1"));
    }
    for c in configs {
        c.engine.validate()?;
    }
    let scenes = suite_scenes(n_scenes, seed);
    let backend = MockBackend::new();
    for s in &scenes {
        backend.register(s.clone());
    }
    let outcomes = configs
        .iter()
        .map(|c| {
            let per_scene: Vec<SceneOutcome> = if parallel {
                scenes.par_iter().map(|s| run_scene(&backend, s, &c.engine, seed)).collect()
            } else {
                scenes.iter().map(|s| run_scene(&backend, s, &c.engine, seed)).collect()
            };
            let correct = per_scene.iter().filter(|o| o.correct).count();
            let hits = per_scene.iter().filter(|o| o.hit).count();
            ConfigOutcome {
                name: c.name.clone(),
                accuracy: correct as f64 / n_scenes as f64,
                hit_rate: hits as f64 / n_scenes as f64,
                correct,
                hits,
                failures: per_scene.iter().filter(|o| o.failed).count(),
                total_tokens: per_scene.iter().map(|o| o.tokens).sum(),
            }
        })
        .collect();
    Ok(SuiteReport {
        n_scenes,
        seed,
        configs: outcomes,
    })
}
