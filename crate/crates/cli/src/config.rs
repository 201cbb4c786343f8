//! Run configuration: defaults, overlaid by an optional JSON file, overlaid by flags.

use std::fs;
use std::path::{Path, PathBuf};

use moldgnn::graphdata::{SplitMode, SplitSpec};
use moldgnn::model::{ModelConfig, NodeFeatures};
use moldgnn::training::{FinetuneBudget, TrainConfig};
use moldgnn::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fully resolved settings of one run. Written to `config.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub trajectories: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: Option<f64>,
    pub split: SplitMode,
    pub ratio: f64,
    /// Fixed per-trajectory split sizes; `None` derives them from `ratio`.
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    pub checkpoints: Vec<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub sample_budget: usize,
    pub epoch_budget: usize,
    pub horizon: usize,
    /// First frame of the rollout seed window.
    pub start: usize,
    pub cross_all: bool,
    pub gcn_features: usize,
    pub lstm_features: usize,
    pub mlp_hidden: Vec<usize>,
    pub node_features: NodeFeatures,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig::reference(0);
        let budget = FinetuneBudget::default();
        RunConfig {
            command: String::new(),
            trajectories: Vec::new(),
            out: PathBuf::from("runs/latest"),
            seed: 0,
            window: model.window,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            clip_norm: None,
            split: SplitMode::Chronological,
            ratio: 0.8,
            train_count: None,
            test_count: None,
            checkpoints: Vec::new(),
            init_checkpoint: None,
            sample_budget: budget.samples,
            epoch_budget: budget.epochs,
            horizon: 1,
            start: 0,
            cross_all: false,
            gcn_features: model.gcn_features,
            lstm_features: model.lstm_features,
            mlp_hidden: model.mlp_hidden,
            node_features: model.node_features,
        }
    }
}

impl RunConfig {
    /// Defaults with every field present in the JSON file replaced.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip_norm: self.clip_norm,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ratio: self.ratio,
            mode: self.split,
            seed: self.seed,
            train_count: self.train_count,
            test_count: self.test_count,
        }
    }

    pub fn model_config(&self, atoms: usize) -> ModelConfig {
        ModelConfig {
            atoms,
            window: self.window,
            gcn_features: self.gcn_features,
            lstm_features: self.lstm_features,
            mlp_hidden: self.mlp_hidden.clone(),
            node_features: self.node_features,
        }
    }

    pub fn budget(&self) -> FinetuneBudget {
        FinetuneBudget {
            samples: self.sample_budget,
            epochs: self.epoch_budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"epochs": 7, "split": "shuffled", "mlp_hidden": [16, 8]}"#).unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.split, SplitMode::Shuffled);
        assert_eq!(cfg.mlp_hidden, vec![16, 8]);
        assert_eq!(cfg.batch_size, 400);
        assert_eq!(cfg.learning_rate, 5e-3);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"epoch": 7}"#).unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert_eq!(err.kind(), moldgnn::ErrorKind::Config);
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig {
            clip_norm: Some(1.0),
            train_count: Some(4000),
            ..RunConfig::default()
        };
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
