mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] vgs_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "vgs", version, about = "Visually guided self-supervised speech features")]
struct Cli {
    /// `key=value` configuration file (`#` comments)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Per-key overrides; values are parsed by the config layer so errors name the key.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true, value_name = "N")]
    seed: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    speakers: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    clips: Option<String>,
    #[arg(long, global = true, value_name = "SECONDS")]
    clip_seconds: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    classes: Option<String>,
    #[arg(long, global = true, value_name = "LR")]
    lr: Option<String>,
    #[arg(long, global = true, value_name = "FACTOR")]
    decay: Option<String>,
    #[arg(long, global = true, value_name = "EPOCHS")]
    decay_interval: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    batch_size: Option<String>,
    #[arg(long, global = true, value_name = "W")]
    width: Option<String>,
    /// train,val,test speaker fractions
    #[arg(long, global = true, value_name = "A,B,C")]
    split: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    probe_hidden: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    probe_layers: Option<String>,
    #[arg(long, global = true, value_name = "LR")]
    probe_lr: Option<String>,
    #[arg(long, global = true, value_name = "FACTOR")]
    probe_decay: Option<String>,
    #[arg(long, global = true, value_name = "EPOCHS")]
    probe_decay_interval: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    probe_epochs: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    probe_batch_size: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("seed", &self.seed),
            ("speakers", &self.speakers),
            ("clips", &self.clips),
            ("clip_seconds", &self.clip_seconds),
            ("classes", &self.classes),
            ("lr", &self.lr),
            ("decay", &self.decay),
            ("decay_interval", &self.decay_interval),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("width", &self.width),
            ("split", &self.split),
            ("probe_hidden", &self.probe_hidden),
            ("probe_layers", &self.probe_layers),
            ("probe_lr", &self.probe_lr),
            ("probe_decay", &self.probe_decay),
            ("probe_decay_interval", &self.probe_decay_interval),
            ("probe_epochs", &self.probe_epochs),
            ("probe_batch_size", &self.probe_batch_size),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic talking-face corpus with a manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the generator on a manifest of clips
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Written after every epoch
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV of per-epoch mean L1
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Continue from --checkpoint if it exists
        #[arg(long)]
        resume: bool,
    },
    /// Write audio-encoder features and a labeled, speaker-split manifest
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "random_init")]
        checkpoint: Option<PathBuf>,
        /// Use an untrained encoder (control)
        #[arg(long, conflicts_with = "checkpoint")]
        random_init: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the LSTM probe on extracted features
    Probe {
        /// features.csv written by `extract`
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        instances: usize,
    },
    /// Plot a metrics CSV as SVG
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(CliError::Config)?;
    }
    cfg.apply_env(std::env::vars()).map_err(CliError::Config)?;
    cfg.apply_flags(cli.overrides.pairs()).map_err(CliError::Config)?;
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    eprint!("# resolved config\n{}", cfg.render());
    match &cli.command {
        Command::Synth { out } => commands::synth(&cfg, out),
        Command::Pretrain { manifest, checkpoint, metrics, resume } => {
            commands::pretrain(&cfg, manifest, checkpoint, metrics.as_deref(), *resume)
        }
        Command::Extract { manifest, checkpoint, out, .. } => commands::extract(&cfg, manifest, checkpoint.as_deref(), out),
        Command::Probe { features, out } => commands::probe(&cfg, features, out),
        Command::Gradcheck { instances } => commands::gradcheck(&cfg, *instances),
        Command::Report { metrics, out } => commands::report(metrics, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
