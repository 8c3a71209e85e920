//! Datasets, metrics, the synthetic ablation suite and trace rendering.

pub mod dataset;
pub mod metrics;
pub mod render;
pub mod suite;

pub use dataset::{load_dataset, parse_dataset, DatasetItem};
pub use metrics::{estimate_flops, format_sci, score_pass1, ItemResult, MetricsReport};
pub use render::render_trace;
pub use suite::{run_synthetic_suite, SuiteConfig, SuiteReport};
