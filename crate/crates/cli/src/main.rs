use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use crs_cli::commands::{self, SweepParam};
use crs_cli::config::DATA_DIR_ENV;
use crs_cli::service::{AppState, Engine, ServiceConfig};
use crs_cli::{Overrides, RunConfig};
use crs_core::checkpoint::load_model;
use crs_core::dataset::DatasetKind;
use crs_core::{CrsError, Variant};

#[derive(Parser)]
#[command(name = "crs", version, about = "Knowledge-graph conversational recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop already-mentioned entities from rankings.
    #[arg(long)]
    exclude_seen: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Root for relative paths in the configuration.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Link a raw corpus to the knowledge graph and write the prepared dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write the checkpoint and metrics log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the configured checkpoint if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write the metrics report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Recommendation metrics only.
        #[arg(long)]
        no_generate: bool,
    },
    /// Evaluate over a grid of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda, mu or length_penalty.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Train a fresh model per value instead of reusing the checkpoint.
        #[arg(long)]
        retrain: bool,
    },
    /// Serve the HTTP session API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write a synthetic corpus with its knowledge graph and aliases.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        conversations: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        cold_start_fraction: f64,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).map_err(|e| e.to_string())
}

fn run_config(common: &Common, epochs: Option<usize>) -> Result<RunConfig, CrsError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        variant: common.variant,
        dataset: common.dataset,
        lambda: common.lambda,
        mu: common.mu,
        gamma: common.gamma,
        beam: common.beam,
        groups: common.groups,
        length_penalty: common.length_penalty,
        seed: common.seed,
        exclude_seen: common.exclude_seen,
        epochs,
        checkpoint: common.checkpoint.clone(),
        output_dir: common.output_dir.clone(),
    });
    cfg.resolve_paths(common.data_dir.as_deref());
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CrsError> {
    match cli.command {
        Command::Preprocess { common } => {
            let cfg = run_config(&common, None)?;
            print_json(&commands::preprocess(&cfg)?);
        }
        Command::Train { common, epochs, resume } => {
            let cfg = run_config(&common, epochs)?;
            print_json(&commands::train(&cfg, resume)?);
        }
        Command::Eval { common, no_generate } => {
            let mut cfg = run_config(&common, None)?;
            cfg.generate &= !no_generate;
            print_json(&commands::eval(&cfg)?);
        }
        Command::Sweep {
            common,
            param,
            grid,
            retrain,
        } => {
            let cfg = run_config(&common, None)?;
            let rows = commands::sweep(&cfg, SweepParam::parse(&param)?, &grid, retrain)?;
            print!("{}", commands::sweep_table(&rows));
        }
        Command::Serve { common, bind } => {
            let mut cfg = run_config(&common, None)?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            let (model, _) = load_model(&cfg.checkpoint)?;
            let engine = Engine::new(
                model,
                ServiceConfig {
                    fusion: cfg.fusion(),
                    decode: cfg.decode(),
                    max_sessions: cfg.max_sessions,
                },
            )?;
            let state = match &cfg.sessions_dir {
                Some(dir) => {
                    cfg.echo(dir)?;
                    AppState::persistent(engine, dir)?
                }
                None => AppState::new(engine),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CrsError::io("tokio runtime", e))?;
            runtime
                .block_on(crs_cli::service::serve(Arc::new(state), &cfg.bind))
                .map_err(|e| CrsError::io(cfg.bind.clone(), e))?;
        }
        Command::Synth {
            out,
            conversations,
            seed,
            cold_start_fraction,
        } => commands::synth(&out, conversations, seed, cold_start_fraction)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
