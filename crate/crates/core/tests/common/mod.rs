//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use omnisparse::io::{gen_synthetic, Dataset, SyntheticSpec};
use omnisparse::sparsity::{ScheduleConfig, SearchSpace};
use omnisparse::tensor::AdamConfig;
use omnisparse::trainer::{ModelArch, PruneCriterion, SupernetModel, TrainConfig, TrainMode};

pub const SMALL_ARCH: ModelArch = ModelArch {
    input_dim: 6,
    hidden: 16,
    layers: 2,
    classes: 3,
};

pub fn small_data(seed: u64) -> (Dataset, Dataset) {
    gen_synthetic(&SyntheticSpec {
        seed,
        n: 2000,
        dim: SMALL_ARCH.input_dim,
        classes: SMALL_ARCH.classes,
        teacher_width: 16,
        label_noise: 0.0,
    })
    .unwrap()
}

pub fn small_cfg(mode: TrainMode, steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        adam: AdamConfig::with_lr(5e-3),
        total_steps: steps,
        kd_weight: 0.5,
        kd_temperature: 1.0,
        schedule: ScheduleConfig::new(0.8, 64, 32).unwrap(),
        seed: 3,
        mode,
    }
}

pub fn small_space() -> SearchSpace {
    SearchSpace::with_default_ratios(SMALL_ARCH.layers).unwrap()
}

pub fn small_model(seed: u64) -> SupernetModel {
    SupernetModel::new(SMALL_ARCH, AdamConfig::with_lr(5e-3), PruneCriterion::Adam, seed).unwrap()
}
