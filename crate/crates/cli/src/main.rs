use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use festa_core::config::{parse_methods, FestaConfig, ParaphraseMode};
use festa_core::instance::{parse_manifest, Label};
use festa_core::mocks::{serve_mock, MockKind, MockModel, MockProfile};
use festa_core::pipeline::{self, CONFIG_FILE};
use festa_core::{FestaError, Result};

#[derive(Parser)]
#[command(name = "festa", version, about = "Uncertainty estimation for multimodal multiple-choice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build equivalent and complementary samples for every instance.
    Generate {
        #[arg(long)]
        dataset: PathBuf,
        /// Run directory to create or update.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Send every sample to the model endpoint and store the replies.
    Query {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Turn stored replies into per-instance uncertainty records.
    Score {
        #[arg(long)]
        run: PathBuf,
        /// Records file; defaults to records.jsonl in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// AUROC, risk-coverage and improvement report from a records file.
    Evaluate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// AUROC as a function of the number of samples per grid.
    Sweep {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated samples-per-grid values.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<usize>>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Serve a behavioral mock model over the chat-completions protocol.
    MockServe {
        #[arg(long)]
        dataset: PathBuf,
        /// consistent, sensitive, ideal, mode_collapse or noisy.
        #[arg(long, default_value = "ideal")]
        profile: String,
        /// Probability of answering the target (noisy).
        #[arg(long, default_value_t = 0.5)]
        accuracy: f64,
        #[arg(long)]
        collapse_label: Option<String>,
        /// Fraction of requests answered with a 503 on first attempt.
        #[arg(long, default_value_t = 0.0)]
        fault_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args, Default)]
struct CommonArgs {
    /// JSON config; stages after `generate` default to the run's copy.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base URL of the chat-completions endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method list.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    k11: Option<usize>,
    #[arg(long)]
    k12: Option<usize>,
    #[arg(long)]
    k21: Option<usize>,
    #[arg(long)]
    k22: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self, run_dir: Option<&Path>) -> Result<FestaConfig> {
        let mut cfg = match (&self.config, run_dir.map(|d| d.join(CONFIG_FILE))) {
            (Some(path), _) => FestaConfig::load(path)?,
            (None, Some(stored)) if stored.exists() => FestaConfig::load(&stored)?,
            _ => FestaConfig::default(),
        };
        if let Some(url) = &self.endpoint {
            cfg.endpoint.base_url = url.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(list) = &self.methods {
            cfg.methods = parse_methods(list)?;
        }
        for (slot, value) in [
            (&mut cfg.k.k11, self.k11),
            (&mut cfg.k.k12, self.k12),
            (&mut cfg.k.k21, self.k21),
            (&mut cfg.k.k22, self.k22),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    println!("{text}");
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { dataset, out, common } => {
            let cfg = common.resolve(None)?;
            let client = match cfg.paraphraser.mode {
                ParaphraseMode::ModelBacked => {
                    Some(Arc::new(pipeline::open_client(&cfg, common.cache_dir.as_deref())?))
                }
                ParaphraseMode::Template => None,
            };
            let summary = pipeline::cmd_generate(&dataset, &cfg, &out, client).await?;
            print_json(&summary);
        }
        Command::Query { run, common } => {
            let cfg = common.resolve(Some(&run))?;
            let client = pipeline::open_client(&cfg, common.cache_dir.as_deref())?;
            let summary = pipeline::cmd_query(&run, &cfg, &client).await?;
            print_json(&summary);
        }
        Command::Score { run, out, common } => {
            let cfg = common.resolve(Some(&run))?;
            let records = pipeline::cmd_score(&run, &cfg, out.as_deref())?;
            eprintln!("scored {} instances", records.len());
        }
        Command::Evaluate { records, out, common } => {
            let run_dir = records.parent().filter(|p| p.join(CONFIG_FILE).exists());
            let cfg = common.resolve(run_dir)?;
            let report = pipeline::cmd_evaluate(&records, &out, &cfg.methods, Some(cfg.fingerprint()))?;
            for m in &report.methods {
                let auroc = m.auroc.map_or_else(|| "null".to_string(), |a| format!("{a:.4}"));
                println!("{:<14} auroc {auroc:<8} n {}", m.method, m.n);
            }
            if let Some(imp) = &report.improvement {
                println!("festa vs {}: {}", imp.best_baseline, imp.display);
            }
        }
        Command::Sweep { run, out, schedule, common } => {
            let cfg = common.resolve(Some(&run))?;
            let instances = pipeline::load_run_dataset(&run)?;
            let any_audio = instances.iter().any(|i| i.media.kind == festa_core::instance::MediaKind::Audio);
            let schedule = schedule.unwrap_or_else(|| cfg.sweep_schedule(any_audio));
            let table = pipeline::cmd_sweep(&run, &cfg, &schedule, out.as_deref().unwrap_or(&run))?;
            for r in &table.rows {
                let auroc = r.auroc.map_or_else(|| "null".to_string(), |a| format!("{a:.4}"));
                println!("{:<14} k {:>3} ({:>3} total) auroc {auroc}", r.method, r.k_per_grid, r.k_total);
            }
        }
        Command::MockServe { dataset, profile, accuracy, collapse_label, fault_rate, seed, host, port } => {
            let kind = MockKind::parse(&profile)?;
            let text = std::fs::read_to_string(&dataset)
                .map_err(|e| FestaError::Usage(format!("cannot read {}: {e}", dataset.display())))?;
            let instances = parse_manifest(&text)?;
            let profile =
                MockProfile { kind, accuracy, collapse_label: collapse_label.as_deref().map(Label::from), seed };
            let model = MockModel::new(instances, profile)?.with_fault_rate(fault_rate);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| FestaError::Usage(format!("bad listen address {host}:{port}: {e}")))?;
            let mut handle = serve_mock(model, addr).await?;
            println!("listening on {}", handle.base_url());
            let _ = std::io::stdout().flush();
            tokio::signal::ctrl_c().await.map_err(|e| FestaError::Config(format!("signal handler: {e}")))?;
            handle.shutdown().await;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FESTA_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
