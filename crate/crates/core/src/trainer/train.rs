use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::SupernetModel;
use super::step::{
    dsnn_train_step, single_train_step, supernet_train_step_observed, StepMetrics, StepObserver, Teacher,
    TrainConfig, TrainMode,
};
use super::{EPOCH_STREAM_BASE, TRAIN_STREAM};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::sparsity::{SearchSpace, SparsityConfig};

/// Serializable position of the training RNG.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Owns the model and everything needed to continue training bit-exactly:
/// step counter and RNG position. Batch order is a pure function of
/// `(seed, step)`, so it needs no saved state.
pub struct Trainer {
    pub model: SupernetModel,
    pub cfg: TrainConfig,
    pub space: SearchSpace,
    step: u64,
    rng: ChaCha8Rng,
    epoch_perm: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(model: SupernetModel, cfg: TrainConfig, space: SearchSpace) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TRAIN_STREAM);
        Self::resume(model, cfg, space, 0, RngState::capture(&rng))
    }

    pub fn resume(model: SupernetModel, cfg: TrainConfig, space: SearchSpace, step: u64, rng: RngState) -> Result<Self> {
        cfg.validate()?;
        if space.num_layers() != model.num_prunable() {
            return Err(Error::param(format!(
                "space has {} layers, model has {} prunable layers",
                space.num_layers(),
                model.num_prunable()
            )));
        }
        if let TrainMode::Single { config, .. } = &cfg.mode {
            if config.len() != model.num_prunable() {
                return Err(Error::param("single-mode config length does not match the model"));
            }
        }
        let mut model = model;
        model.adam.config = cfg.adam;
        Ok(Self {
            model,
            cfg,
            space,
            step,
            rng: rng.restore(),
            epoch_perm: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn into_model(self) -> SupernetModel {
        self.model
    }

    /// Example indices of the batch for the current step.
    pub fn batch_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        let b = self.cfg.batch_size;
        if n < b {
            return Err(Error::param(format!("dataset of {n} examples is smaller than one batch of {b}")));
        }
        let per_epoch = (n / b) as u64;
        let epoch = self.step / per_epoch;
        let k = (self.step % per_epoch) as usize;
        let stale = !matches!(&self.epoch_perm, Some((e, p)) if *e == epoch && p.len() == n);
        if stale {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(EPOCH_STREAM_BASE + epoch);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            self.epoch_perm = Some((epoch, perm));
        }
        let perm = &self.epoch_perm.as_ref().expect("just filled").1;
        Ok(perm[k * b..(k + 1) * b].to_vec())
    }

    /// Runs one step of the configured regime on the next batch.
    pub fn train_step(
        &mut self,
        data: &Dataset,
        teacher: Option<&SupernetModel>,
        observer: &mut dyn StepObserver,
    ) -> Result<StepMetrics> {
        let t = match (&self.cfg.mode, teacher) {
            (TrainMode::Single { distill: true, .. }, Some(t)) => Teacher::Frozen(t),
            (TrainMode::Single { distill: true, .. }, None) => {
                return Err(Error::param("single-kd mode needs a frozen dense teacher"))
            }
            _ => Teacher::None,
        };
        self.step_with(data, t, observer)
    }

    fn step_with(&mut self, data: &Dataset, teacher: Teacher<'_>, observer: &mut dyn StepObserver) -> Result<StepMetrics> {
        let idx = self.batch_indices(data.len())?;
        let (x, y) = data.gather(&idx);
        let m = match &self.cfg.mode {
            TrainMode::Supernet => supernet_train_step_observed(
                &mut self.model,
                &x,
                &y,
                self.step,
                &self.space,
                &self.cfg,
                &mut self.rng,
                observer,
            )?,
            TrainMode::Single { config, .. } => single_train_step(
                &mut self.model,
                &x,
                &y,
                self.step,
                config,
                teacher,
                &self.cfg,
                &mut self.rng,
                observer,
            )?,
            TrainMode::Dsnn { ratios } => dsnn_train_step(
                &mut self.model,
                &x,
                &y,
                self.step,
                ratios,
                &self.cfg,
                &mut self.rng,
                observer,
            )?,
        };
        self.step += 1;
        Ok(m)
    }

    pub fn run(
        &mut self,
        data: &Dataset,
        steps: u64,
        teacher: Option<&SupernetModel>,
        observer: &mut dyn StepObserver,
    ) -> Result<Vec<StepMetrics>> {
        (0..steps).map(|_| self.train_step(data, teacher, observer)).collect()
    }
}

/// Trains for `cfg.total_steps` steps in the configured regime.
pub fn train(
    model: SupernetModel,
    data: &Dataset,
    space: &SearchSpace,
    cfg: &TrainConfig,
    teacher: Option<&SupernetModel>,
) -> Result<(SupernetModel, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(model, cfg.clone(), space.clone())?;
    let history = trainer.run(data, cfg.total_steps, teacher, &mut ())?;
    Ok((trainer.into_model(), history))
}

/// Continued-training regimes applied to an already trained supernet.
#[derive(Clone, Debug, PartialEq)]
pub enum Finetune {
    /// Train one fixed sub-network, distilled in place from the dense
    /// supernet when the KD weight is positive.
    Model(SparsityConfig),
    /// Keep training the supernet with sandwich sampling.
    Supernet,
}

pub fn finetune(trainer: &mut Trainer, data: &Dataset, how: &Finetune, steps: u64) -> Result<Vec<StepMetrics>> {
    let saved = trainer.cfg.mode.clone();
    let (mode, teacher) = match how {
        Finetune::Model(config) => {
            trainer.space.validate(config)?;
            (
                TrainMode::Single {
                    config: config.clone(),
                    distill: trainer.cfg.kd_weight > 0.0,
                },
                Teacher::InPlace,
            )
        }
        Finetune::Supernet => (TrainMode::Supernet, Teacher::None),
    };
    trainer.cfg.mode = mode;
    let result = (0..steps).map(|_| trainer.step_with(data, teacher, &mut ())).collect();
    trainer.cfg.mode = saved;
    result
}
