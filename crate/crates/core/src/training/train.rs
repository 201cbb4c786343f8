use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{Normalizer, WindowSample};
use crate::model::{pack_upper, record_forward, ModelParams};
use crate::numerics::{derive_seed, Matrix, Rng, Tape, Var};

use super::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optional global gradient-norm clipping; off unless set.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            epochs: 5000,
            batch_size: 400,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Where a training run starts from.
#[derive(Debug, Clone)]
pub enum TrainStart {
    /// New parameters; Adam and the shuffle stream start fresh.
    Fresh {
        params: ModelParams,
        normalizer: Normalizer,
    },
    /// Continue a checkpoint until the configured epoch count is reached.
    Resume(Checkpoint),
}

/// Mean squared error over the strict upper triangle of two adjacency matrices.
pub fn loss_mse(predicted: &Matrix, target: &Matrix) -> Result<f64> {
    if predicted.shape() != target.shape() || !predicted.is_square() {
        return Err(Error::ShapeMismatch {
            op: "loss_mse",
            left: predicted.shape(),
            right: target.shape(),
        });
    }
    let p = pack_upper(predicted);
    let t = pack_upper(target);
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
}

/// Normalized inputs and packed targets (`edges x B`) of a batch.
pub(crate) fn normalized_batch(
    samples: &[&WindowSample],
    normalizer: &Normalizer,
) -> (Vec<Vec<Matrix>>, Matrix) {
    let inputs: Vec<Vec<Matrix>> = samples
        .iter()
        .map(|s| {
            s.inputs
                .iter()
                .map(|a| normalizer.normalize_matrix(&a.adjacency))
                .collect()
        })
        .collect();
    let n = samples[0].atom_count();
    let edges = n * (n - 1) / 2;
    let mut targets = Matrix::zeros(edges, samples.len());
    for (b, s) in samples.iter().enumerate() {
        let t = pack_upper(&normalizer.normalize_matrix(&s.target.adjacency));
        for (e, v) in t.into_iter().enumerate() {
            targets.set(e, b, v);
        }
    }
    (inputs, targets)
}

/// Mean batch loss and gradient of every parameter tensor (storage order).
pub fn batch_loss_and_grads(
    params: &ModelParams,
    samples: &[&WindowSample],
    normalizer: &Normalizer,
) -> Result<(f64, Vec<Matrix>)> {
    let (inputs, targets) = normalized_batch(samples, normalizer);
    let refs: Vec<&[Matrix]> = inputs.iter().map(|w| w.as_slice()).collect();
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let pred = record_forward(&mut tape, &vars, &params.config, &refs)?;
    let loss = record_mse(&mut tape, pred, targets)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let out = vars.in_order().into_iter().map(|v| grads.take(v)).collect();
    Ok((value, out))
}

fn record_mse(tape: &mut Tape, pred: Var, targets: Matrix) -> Result<Var> {
    let t = tape.constant(targets);
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

fn check_dataset(samples: &[WindowSample], params: &ModelParams) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let cfg = &params.config;
    for (k, s) in samples.iter().enumerate() {
        if s.atom_count() != cfg.atoms {
            return Err(Error::Dataset(format!(
                "sample {k} has {} atoms, model expects {}",
                s.atom_count(),
                cfg.atoms
            )));
        }
        if s.window() != cfg.window {
            return Err(Error::Dataset(format!(
                "sample {k} has window {}, model expects {}",
                s.window(),
                cfg.window
            )));
        }
    }
    Ok(())
}

/// Trains until `config.epochs` epochs have completed.
///
/// Every epoch shuffles the sample order with the run's shuffle stream, walks
/// it in minibatches of `batch_size` (the last one may be short) and takes one
/// Adam step on the mean batch loss. The recorded epoch loss is the
/// sample-weighted mean of the batch losses seen during that epoch.
pub fn train(samples: &[WindowSample], config: &TrainConfig, start: TrainStart) -> Result<Checkpoint> {
    train_with_progress(samples, config, start, |_, _| {})
}

pub fn train_with_progress(
    samples: &[WindowSample],
    config: &TrainConfig,
    start: TrainStart,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    config.validate()?;
    let mut ckpt = match start {
        TrainStart::Fresh { params, normalizer } => Checkpoint {
            adam: Some(AdamState::new(params.tensors())),
            params,
            normalizer,
            train_config: config.clone(),
            epoch: 0,
            rng: Rng::new(derive_seed(config.seed, "shuffle")),
            loss_history: Vec::new(),
            provenance: None,
        },
        TrainStart::Resume(mut c) => {
            if c.adam.is_none() {
                c.adam = Some(AdamState::new(c.params.tensors()));
            }
            c.train_config = config.clone();
            c
        }
    };
    check_dataset(samples, &ckpt.params)?;
    if config.batch_size > samples.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            samples.len()
        )));
    }

    let adam_cfg = config.adam();
    let names = ckpt.params.tensor_names();
    let mut adam = ckpt.adam.take().expect("set above");
    while ckpt.epoch < config.epochs {
        let epoch = ckpt.epoch;
        let order = ckpt.rng.permutation(samples.len());
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grads) = batch_loss_and_grads(&ckpt.params, &batch, &ckpt.normalizer)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam_step(&mut ckpt.params.tensors_mut(), &names, &grads, &mut adam, &adam_cfg)?;
            weighted += loss * batch.len() as f64;
        }
        let mean = weighted / samples.len() as f64;
        ckpt.loss_history.push(mean);
        ckpt.epoch += 1;
        on_epoch(ckpt.epoch, mean);
    }
    ckpt.adam = Some(adam);
    Ok(ckpt)
}

/// Sample and epoch allowance for finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneBudget {
    pub samples: usize,
    pub epochs: usize,
}

impl Default for FinetuneBudget {
    fn default() -> Self {
        FinetuneBudget {
            samples: 400,
            epochs: 500,
        }
    }
}

/// Continues training `base` on the first `budget.samples` windows of a new
/// trajectory for `budget.epochs` epochs with a fresh Adam state. The base
/// normalizer is kept so inputs keep the scaling the network was trained on.
pub fn finetune(
    base: &Checkpoint,
    windows: &[WindowSample],
    budget: FinetuneBudget,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    if let Some(s) = windows.first() {
        if s.atom_count() != base.params.config.atoms {
            return Err(Error::Dataset(format!(
                "base model has {} atoms, finetuning data has {}",
                base.params.config.atoms,
                s.atom_count()
            )));
        }
    }
    if budget.samples == 0 || budget.samples > windows.len() {
        return Err(Error::Config(format!(
            "finetune sample budget {} must lie in 1..={}",
            budget.samples,
            windows.len()
        )));
    }
    let subset = &windows[..budget.samples];
    let cfg = TrainConfig {
        epochs: budget.epochs,
        ..config.clone()
    };
    let mut out = train(
        subset,
        &cfg,
        TrainStart::Fresh {
            params: base.params.clone(),
            normalizer: base.normalizer,
        },
    )?;
    out.provenance = Some(Provenance {
        base_fingerprint: base.fingerprint(),
        base_epoch: base.epoch,
        finetune_samples: budget.samples,
        finetune_epochs: budget.epochs,
    });
    Ok(out)
}

/// `epoch,mean_train_loss` rows, epochs counted from 1.
pub fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,mean_train_loss\n");
    for (k, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", k + 1, l));
    }
    out
}
