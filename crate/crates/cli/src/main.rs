use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use humal_cli::commands;
use humal_cli::config::RunConfigFile;
use humal_cli::server::{self, ServerConfig};

/// Human-attention supervised text classification.
#[derive(Parser)]
#[command(name = "humal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Write artifacts here instead of the configured output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfigFile> {
        let mut cfg = RunConfigFile::load(&self.config)?;
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Filter, resolve labels and write the processed dataset, exclusion
    /// log, confusion counts and vocabulary.
    Prepare(ConfigArg),
    /// Fit one strategy; writes checkpoint.json, history.csv,
    /// loss_report.csv and metrics.json.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Strategy label or kind (baseline, al, an, ap); defaults to the
        /// first configured strategy.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Bootstrap evaluation over every configured size and ratio.
    Sweep(ConfigArg),
    /// Smoothed AUC-versus-size curves and label-cost gaps.
    Curve(ConfigArg),
    /// Compare model and human attention on held-out documents.
    Analyze {
        #[command(flatten)]
        config: ConfigArg,
        /// Trained model as KIND=PATH; repeat for several.
        #[arg(long = "checkpoint", required = true, value_parser = parse_checkpoint)]
        checkpoints: Vec<(humal_core::humal::StrategyKind, PathBuf)>,
    },
    /// Generate a planted-cue dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Generator settings (TOML); defaults apply otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        documents: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the annotation API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Task pool in the dataset format.
        #[arg(long)]
        data: PathBuf,
        /// Append-only submission store.
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        min_highlight_frac: f64,
        #[arg(long, default_value_t = 3)]
        target_annotators: usize,
    },
}

fn parse_checkpoint(s: &str) -> Result<(humal_core::humal::StrategyKind, PathBuf), String> {
    commands::parse_checkpoint_arg(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => commands::prepare(&c.load()?),
        Command::Train { config, strategy } => commands::train(&config.load()?, strategy.as_deref()),
        Command::Sweep(c) => commands::sweep(&c.load()?),
        Command::Curve(c) => commands::curve(&c.load()?),
        Command::Analyze { config, checkpoints } => commands::analyze(&config.load()?, &checkpoints),
        Command::Synth {
            out,
            spec,
            documents,
            seed,
        } => commands::synth(spec.as_deref(), documents, seed, &out),
        Command::Serve {
            port,
            data,
            store,
            min_highlight_frac,
            target_annotators,
        } => {
            let cfg = ServerConfig {
                min_highlight_frac,
                target_annotators,
                ..ServerConfig::new(data, store)
            };
            tokio::runtime::Runtime::new()?.block_on(server::serve(cfg, port))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors print to stderr and exit with status 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
