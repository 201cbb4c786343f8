//! Command-line workflows: train, finetune, eval and predict.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use moldgnn::graphdata::SplitMode;
use moldgnn::model::NodeFeatures;
use moldgnn::{Error, ErrorKind, Result};

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "moldgnn", version, about = "Predict molecular distance graphs with a GCN-LSTM network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one or more trajectories and evaluate on their held-out windows.
    Train(RunArgs),
    /// Continue a trained checkpoint on the first windows of a new trajectory.
    Finetune(RunArgs),
    /// Evaluate checkpoints on held-out windows, optionally all model/trajectory pairs.
    Eval(RunArgs),
    /// Roll a checkpoint forward from a seed window, writing predicted distance matrices.
    Predict(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Finetune(_) => "finetune",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Train(a) | Command::Finetune(a) | Command::Eval(a) | Command::Predict(a) => a,
        }
    }
}

fn parse_node_features(s: &str) -> std::result::Result<NodeFeatures, String> {
    match s {
        "adjacency" => Ok(NodeFeatures::Adjacency),
        "identity" => Ok(NodeFeatures::Identity),
        other => Err(format!("unknown node features {other:?} (expected adjacency or identity)")),
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config file, then defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Multi-frame XYZ file; repeat for several trajectories.
    #[arg(long = "trajectory")]
    pub trajectories: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// chronological or shuffled.
    #[arg(long)]
    pub split: Option<SplitMode>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Trained checkpoint; repeat with --cross-all, one per trajectory.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Base checkpoint for finetune, or a checkpoint to resume for train.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub sample_budget: Option<usize>,
    #[arg(long)]
    pub epoch_budget: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// First frame of the predict seed window.
    #[arg(long)]
    pub start: Option<usize>,
    /// Evaluate every checkpoint on every trajectory.
    #[arg(long)]
    pub cross_all: bool,
    #[arg(long)]
    pub gcn_features: Option<usize>,
    #[arg(long)]
    pub lstm_features: Option<usize>,
    /// Comma-separated MLP hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub mlp_hidden: Option<Vec<usize>>,
    /// adjacency or identity.
    #[arg(long, value_parser = parse_node_features)]
    pub node_features: Option<NodeFeatures>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self, command: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.command = command.to_string();
        if !self.trajectories.is_empty() {
            cfg.trajectories = self.trajectories.clone();
        }
        if !self.checkpoints.is_empty() {
            cfg.checkpoints = self.checkpoints.clone();
        }
        if self.cross_all {
            cfg.cross_all = true;
        }
        overlay!(
            cfg, self, out, seed, window, epochs, batch_size, learning_rate, split, ratio,
            sample_budget, epoch_budget, horizon, start, gcn_features, lstm_features, mlp_hidden,
            node_features
        );
        for (slot, v) in [
            (&mut cfg.train_count, self.train_count),
            (&mut cfg.test_count, self.test_count),
        ] {
            if v.is_some() {
                *slot = v;
            }
        }
        if self.clip_norm.is_some() {
            cfg.clip_norm = self.clip_norm;
        }
        if self.init_checkpoint.is_some() {
            cfg.init_checkpoint = self.init_checkpoint.clone();
        }
        Ok(cfg)
    }
}

/// Process exit status for an error: 2 configuration, 3 data, 4 numeric abort, 1 I/O.
pub fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 1,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.command.args().resolve(cli.command.name())?;
    match cli.command {
        Command::Train(_) => commands::train(&cfg).map(drop),
        Command::Finetune(_) => commands::finetune(&cfg).map(drop),
        Command::Eval(_) => commands::eval(&cfg).map(drop),
        Command::Predict(_) => commands::predict(&cfg).map(drop),
    }
}
