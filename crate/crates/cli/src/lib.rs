//! Command-line driver: `pretrain`, `adapt`, `eval`, `interp`, `latent` and `serve`.

pub mod commands;
pub mod protocol;
pub mod serve;

use std::path::PathBuf;

use adaptnet::adapt::AdaptError;
use adaptnet::analysis::AnalysisError;
use adaptnet::experiment::{ConfigError, ExperimentConfig};
use adaptnet::neural::NeuralError;
use adaptnet::trainer::TrainError;
use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(_) | ConfigError::Json(_) | ConfigError::Train(TrainError::Config(_)) => {
                CliError::Config(e.to_string())
            }
            ConfigError::Adapt(AdaptError::Config(_) | AdaptError::Alpha(_)) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<AdaptError> for CliError {
    fn from(e: AdaptError) -> Self {
        match e {
            AdaptError::Config(_) | AdaptError::Alpha(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(std::io::Error, serde_json::Error, NeuralError, AnalysisError);

#[derive(Parser, Debug)]
#[command(name = "adaptnet", version, about = "Latent-injection adapters for a planar walker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdKind {
    Pretrain,
    Adapt,
    Eval,
    Interp,
    Latent,
    Serve,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train a base policy from scratch.
    Pretrain(Args),
    /// Train adapters (or a baseline) on top of a base policy.
    Adapt(Args),
    /// Evaluate the base policy or the first adapter at `adapter.alpha`.
    Eval(Args),
    /// Evaluate along an α schedule (one adapter) or a blend (two adapters).
    Interp(Args),
    /// MDS embedding of latents and foot-height traces.
    Latent(Args),
    /// Run a live session over WebSocket.
    Serve(Args),
}

#[derive(clap::Args, Debug, Default)]
pub struct Args {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base policy checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Adapter checkpoint; repeat for several.
    #[arg(long = "adapter")]
    pub adapters: Vec<PathBuf>,
    /// Scenario such as `style:stoop` or `friction:0.15`.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub port: Option<u16>,
}

impl Cmd {
    pub fn parts(&self) -> (CmdKind, &Args) {
        match self {
            Cmd::Pretrain(a) => (CmdKind::Pretrain, a),
            Cmd::Adapt(a) => (CmdKind::Adapt, a),
            Cmd::Eval(a) => (CmdKind::Eval, a),
            Cmd::Interp(a) => (CmdKind::Interp, a),
            Cmd::Latent(a) => (CmdKind::Latent, a),
            Cmd::Serve(a) => (CmdKind::Serve, a),
        }
    }
}

/// Config file plus flag overrides, validated.
pub fn resolve(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(b) = &args.base {
        cfg.base = Some(b.clone());
    }
    if !args.adapters.is_empty() {
        cfg.adapters = args.adapters.clone();
    }
    if let Some(s) = &args.scenario {
        cfg.scenario = s.parse()?;
    }
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    if let Some(a) = args.alpha {
        cfg.adapter.alpha = a;
    }
    if let Some(p) = args.port {
        cfg.serve.port = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (kind, args) = cli.command.parts();
    let cfg = resolve(args)?;
    match kind {
        CmdKind::Pretrain => commands::pretrain(&cfg),
        CmdKind::Adapt => commands::adapt(&cfg),
        CmdKind::Eval => commands::eval(&cfg),
        CmdKind::Interp => commands::interp(&cfg),
        CmdKind::Latent => commands::latent(&cfg),
        CmdKind::Serve => commands::serve(&cfg),
    }
}
