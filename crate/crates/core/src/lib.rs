//! Search-based reasoning for vision-language models: sampled foresight
//! scored by visual focus and progression, plus attention-guided cropping.

pub mod attention;
pub mod backend;
pub mod error;
pub mod focus;
pub mod harness;
pub mod orchestrator;
pub mod scheduler;
pub mod scoring;

pub use attention::{AttentionGrid, CellMask, NormalizedGrid};
pub use backend::{Backend, BackendCaps, HttpBackend, HttpOptions, ImageHandle, MockBackend, SyntheticScene, ViewSpec};
pub use error::{Error, Result};
pub use focus::{FocusComputation, FocusState, PixelRect, Rect, View};
pub use orchestrator::{run_cofft, EngineConfig, Example, RunFailure, RunResult, RunTrace, StopReason};
pub use scheduler::SchedulerState;
pub use scoring::{ReasoningStep, Sample, ScoreBundle, TERMINATOR};
