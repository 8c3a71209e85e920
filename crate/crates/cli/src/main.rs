use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cofft_core::backend::{Backend, HttpBackend, HttpOptions, ImageHandle, MockBackend, SyntheticScene};
use cofft_core::harness::metrics::evaluate_dataset;
use cofft_core::harness::{load_dataset, render_trace, run_synthetic_suite, DatasetItem, MetricsReport, SuiteConfig};
use cofft_core::orchestrator::{run_cofft, EngineConfig, Example};

#[derive(Parser)]
#[command(name = "cofft", version, about = "Foresight-guided visual reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question about one image and print the trace.
    Run(RunArgs),
    /// Evaluate a JSONL dataset and print a metrics report.
    Bench(BenchArgs),
    /// Compare engine configurations on seeded synthetic scenes.
    Suite(SuiteArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    #[arg(long, env = "COFFT_ENDPOINT")]
    endpoint: Option<String>,
    /// Per-request timeout for the HTTP backend, in seconds.
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    l: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_dfd: bool,
    #[arg(long)]
    no_vfa: bool,
    /// Divide the progression score by l instead of the sample length.
    #[arg(long)]
    strict_l: bool,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        let cfg = EngineConfig {
            k: self.k,
            l: self.l,
            lambda: self.lambda,
            alpha: self.alpha,
            max_reasoning_steps: self.max_steps,
            seed: self.seed,
            ablation_no_dfd: self.no_dfd,
            ablation_no_vfa: self.no_vfa,
            strict_l_divisor: self.strict_l,
            ..EngineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Image file, or `scene:<spec>` for a synthetic scene.
    #[arg(long)]
    image: String,
    #[arg(long)]
    question: String,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Write trace.json and heatmaps here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model size in billions of parameters, for the FLOPS estimate.
    #[arg(long)]
    params_billion: f64,
    /// Repeat with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repeat: u64,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    #[arg(long, value_delimiter = ',', default_value = "full,no-dfd,no-vfa,greedy")]
    compare: Vec<String>,
    #[arg(long)]
    serial: bool,
    #[command(flatten)]
    engine: EngineArgs,
}

enum AnyBackend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl AnyBackend {
    fn open(args: &BackendArgs) -> Result<Self> {
        Ok(match args.backend {
            BackendKind::Mock => Self::Mock(MockBackend::new()),
            BackendKind::Http => {
                let endpoint = args
                    .endpoint
                    .clone()
                    .context("--backend http needs --endpoint or COFFT_ENDPOINT")?;
                let options = HttpOptions {
                    timeout: Duration::from_secs(args.timeout_secs),
                    ..HttpOptions::default()
                };
                let http = HttpBackend::new(endpoint, options);
                http.healthz().context("sidecar health check failed")?;
                Self::Http(http)
            }
        })
    }

    fn backend(&self) -> &dyn Backend {
        match self {
            Self::Mock(m) => m,
            Self::Http(h) => h,
        }
    }

    fn resolve(&self, image: &str, base_dir: &Path) -> cofft_core::Result<ImageHandle> {
        match (self, image.strip_prefix("scene:")) {
            (Self::Mock(m), Some(spec)) => Ok(m.register(SyntheticScene::parse(spec)?)),
            (Self::Mock(_), None) => Err(cofft_core::Error::InvalidInput(format!(
                "the mock backend only accepts scene:<spec> images, got {image:?}"
            ))),
            (Self::Http(_), Some(_)) => Err(cofft_core::Error::InvalidInput(
                "synthetic scenes need --backend mock".into(),
            )),
            (Self::Http(h), None) => h.register_image(&base_dir.join(image)),
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.engine.config()?;
    let backend = AnyBackend::open(&args.backend)?;
    let image = backend.resolve(&args.image, Path::new("."))?;
    let example = Example {
        image,
        question: args.question,
    };
    let (trace, outcome) = match run_cofft(&example, &config, backend.backend()) {
        Ok(r) => (r.trace, Ok(())),
        Err(f) => (f.trace, Err(f.source)),
    };
    let json = trace.to_json();
    if let Some(dir) = &args.trace_out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("trace.json"), &json)?;
        if !trace.iterations.is_empty() {
            render_trace(&trace, dir)?;
        }
    }
    println!("{json}");
    outcome.context("run failed; partial trace printed")
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.params_billion <= 0.0 {
        bail!("--params-billion must be positive");
    }
    if args.repeat == 0 {
        bail!("--repeat must be >= 1");
    }
    let items: Vec<DatasetItem> =
        load_dataset(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let base_dir = args.dataset.parent().unwrap_or(Path::new(".")).to_path_buf();
    let config = args.engine.config()?;
    let backend = AnyBackend::open(&args.backend)?;
    let parallel = matches!(backend, AnyBackend::Mock(_));
    let reports = (0..args.repeat)
        .map(|r| {
            let cfg = EngineConfig {
                seed: config.seed.wrapping_add(r),
                ..config.clone()
            };
            evaluate_dataset(
                &items,
                &cfg,
                backend.backend(),
                |item| backend.resolve(&item.image, &base_dir),
                args.params_billion * 1e9,
                parallel,
            )
        })
        .collect::<cofft_core::Result<Vec<MetricsReport>>>()?;
    let out = if let [only] = reports.as_slice() {
        serde_json::to_value(only)?
    } else {
        let mean = reports.iter().map(|r| r.pass_at_1).sum::<f64>() / reports.len() as f64;
        serde_json::json!({ "runs": reports, "mean_pass_at_1": mean })
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn suite(args: SuiteArgs) -> Result<()> {
    let base = args.engine.config()?;
    let configs = args
        .compare
        .iter()
        .map(|name| SuiteConfig::named(name.trim(), &base))
        .collect::<cofft_core::Result<Vec<_>>>()?;
    let report = run_synthetic_suite(args.scenes, base.seed, &configs, !args.serial)?;
    println!("{}", report.to_json());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Suite(a) => suite(a),
    }
}
