#![allow(dead_code)]

pub mod oracles;

use dualspace::noisegen::{build_task, GaussianSourceSpec, TaskSpec};
use dualspace::trainer::NetShape;
use dualspace::{LabeledDataset, NoiseSpec, NoiseType, TrainConfig};

/// 4 Gaussian classes, 3 known, 30% symmetric noise: 90 known plus 30 open
/// training samples.
pub fn small_task(seed: u64) -> LabeledDataset {
    task(4, 3, 40, 10, 4.0, seed)
}

pub fn task(classes: usize, known: usize, per_class: usize, test_per_class: usize, separation: f64, seed: u64) -> LabeledDataset {
    build_task(&TaskSpec {
        source: GaussianSourceSpec {
            num_classes: classes,
            dim: 8,
            per_class,
            test_per_class,
            separation,
            seed,
        },
        noise: NoiseSpec {
            known_classes: known,
            noise_type: NoiseType::Symmetric,
            noise_rate: 0.3,
            seed,
        },
        open_train: None,
    })
    .unwrap()
}

pub fn small_config(warmup: usize, total: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = 7;
    cfg.hyper.warmup_epochs = warmup;
    cfg.hyper.total_epochs = total;
    cfg.hyper.neighbors = 10;
    cfg.hyper.batch_size = 32;
    cfg.net = NetShape {
        hidden: vec![16],
        proj_hidden: 16,
        proj_dim: 8,
    };
    cfg
}
