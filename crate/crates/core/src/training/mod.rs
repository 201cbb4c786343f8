//! Loss, Adam, training and finetuning loops, and checkpoint persistence.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Provenance, FORMAT_VERSION, MAGIC};
pub use train::{
    batch_loss_and_grads, finetune, loss_csv, loss_mse, train, train_with_progress,
    FinetuneBudget, TrainConfig, TrainStart,
};
pub(crate) use train::normalized_batch;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{Normalizer, Snapshot, WindowSample};
    use crate::model::{init_params, ModelConfig, NodeFeatures};
    use crate::numerics::{Matrix, Rng};
    use std::sync::Arc;

    fn config() -> ModelConfig {
        ModelConfig {
            atoms: 3,
            window: 2,
            gcn_features: 2,
            lstm_features: 4,
            mlp_hidden: vec![6],
            node_features: NodeFeatures::Adjacency,
        }
    }

    fn samples(n: usize, seed: u64) -> Vec<WindowSample> {
        let mut rng = Rng::new(seed);
        let snaps: Vec<Arc<Snapshot>> = (0..n + 2)
            .map(|k| {
                let (a, b, c) = (
                    rng.uniform(1.0, 2.0),
                    rng.uniform(1.0, 2.0),
                    rng.uniform(1.0, 2.0),
                );
                Arc::new(Snapshot {
                    adjacency: Matrix::from_rows(&[[0.0, a, b], [a, 0.0, c], [b, c, 0.0]]),
                    frame_index: k,
                })
            })
            .collect();
        crate::graphdata::make_windows(&snaps, 2).unwrap()
    }

    fn fresh() -> TrainStart {
        TrainStart::Fresh {
            params: init_params(&config(), 4).unwrap(),
            normalizer: Normalizer::new(1.0, 2.0).unwrap(),
        }
    }

    #[test]
    fn loss_examples() {
        let a = Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]);
        let b = Matrix::from_rows(&[[0.0, 0.7], [0.7, 0.0]]);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        assert!((loss_mse(&a, &b).unwrap() - 0.04).abs() < 1e-15);
        assert!(loss_mse(&a, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = Rng::new(12);
        let a = rng.uniform_matrix(7, 7, 0.0, 1.0);
        let b = rng.uniform_matrix(7, 7, 0.0, 1.0);
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..7 {
            for j in i + 1..7 {
                acc += (a.get(i, j) - b.get(i, j)).powi(2);
                n += 1;
            }
        }
        assert!((loss_mse(&a, &b).unwrap() - acc / n as f64).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let data = samples(12, 1);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg, fresh()).unwrap();
        let b = train(&data, &cfg, fresh()).unwrap();
        let bits = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_history.len(), 5);
    }

    #[test]
    fn resume_equals_uninterrupted() {
        let data = samples(12, 2);
        let full_cfg = TrainConfig {
            epochs: 6,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let full = train(&data, &full_cfg, fresh()).unwrap();
        let half_cfg = TrainConfig {
            epochs: 3,
            ..full_cfg.clone()
        };
        let half = train(&data, &half_cfg, fresh()).unwrap();
        let reloaded = Checkpoint::decode(&half.encode().unwrap()).unwrap();
        let resumed = train(&data, &full_cfg, TrainStart::Resume(reloaded)).unwrap();
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.loss_history, full.loss_history);
        assert_eq!(resumed.epoch, 6);
    }

    #[test]
    fn batch_larger_than_dataset_is_rejected() {
        let data = samples(3, 2);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 10,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &cfg, fresh()), Err(crate::Error::Config(_))));
    }

    #[test]
    fn atom_count_mismatch_is_rejected() {
        let mut cfg = config();
        cfg.atoms = 4;
        let start = TrainStart::Fresh {
            params: init_params(&cfg, 0).unwrap(),
            normalizer: Normalizer::new(1.0, 2.0).unwrap(),
        };
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&samples(4, 0), &tc, start),
            Err(crate::Error::Dataset(_))
        ));
    }

    #[test]
    fn zero_epoch_finetune_is_identity() {
        let data = samples(10, 3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let base = train(&data, &cfg, fresh()).unwrap();
        let ft = finetune(
            &base,
            &samples(10, 4),
            FinetuneBudget {
                samples: 4,
                epochs: 0,
            },
            &TrainConfig {
                batch_size: 4,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(ft.params, base.params);
        let prov = ft.provenance.unwrap();
        assert_eq!(prov.base_fingerprint, base.fingerprint());
        assert_eq!(prov.finetune_samples, 4);
    }

    #[test]
    fn finetune_budget_must_fit() {
        let data = samples(10, 3);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let base = train(&data, &cfg, fresh()).unwrap();
        let budget = FinetuneBudget {
            samples: 11,
            epochs: 1,
        };
        assert!(finetune(&base, &data, budget, &cfg).is_err());
    }

    #[test]
    fn loss_csv_format() {
        assert_eq!(loss_csv(&[0.5, 0.25]), "epoch,mean_train_loss\n1,0.5\n2,0.25\n");
    }
}
