//! One optimizer step for each training regime.

use std::ops::Range;
use std::time::{Duration, Instant};

use rand::Rng;

use super::model::{LayerScores, SupernetModel};
use super::sampling::{sandwich_sample, split_batch};
use crate::error::{Error, Result};
use crate::sparsity::{clamp_config, cubic_max_sparsity, ScheduleConfig, SearchSpace, SparsityConfig};
use crate::tensor::{AdamConfig, Mode, NodeId, Tape, Tensor};

/// Cost of a gradient-free forward pass relative to forward+backward.
pub const FORWARD_COST: f64 = 1.0 / 3.0;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainMode {
    /// Sandwich-sampled supernet with in-place distillation.
    Supernet,
    /// One fixed configuration on full batches, optionally distilled from a
    /// frozen dense teacher.
    Single { config: SparsityConfig, distill: bool },
    /// Joint training of fixed uniform sparsities, each on the full batch.
    Dsnn { ratios: Vec<f64> },
}

impl TrainMode {
    pub const DSNN_DEFAULT_RATIOS: [f64; 4] = [0.0, 0.5, 0.7, 0.8];

    pub fn single_no_kd(sparsity: f64, layers: usize) -> Self {
        TrainMode::Single {
            config: SparsityConfig::uniform(sparsity, layers),
            distill: false,
        }
    }

    pub fn single_kd(sparsity: f64, layers: usize) -> Self {
        TrainMode::Single {
            config: SparsityConfig::uniform(sparsity, layers),
            distill: true,
        }
    }

    pub fn dsnn() -> Self {
        TrainMode::Dsnn {
            ratios: Self::DSNN_DEFAULT_RATIOS.to_vec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Supernet => "supernet",
            TrainMode::Single { distill: false, .. } => "single-nokd",
            TrainMode::Single { distill: true, .. } => "single-kd",
            TrainMode::Dsnn { .. } => "dsnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub total_steps: u64,
    pub kd_weight: f64,
    pub kd_temperature: f64,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        if matches!(self.mode, TrainMode::Supernet | TrainMode::Dsnn { .. }) && self.batch_size % 4 != 0 {
            return Err(Error::param(format!(
                "batch size {} must be a multiple of 4 in {} mode",
                self.batch_size,
                self.mode.name()
            )));
        }
        if !(0.0..=1.0).contains(&self.kd_weight) {
            return Err(Error::param(format!("kd weight {} outside [0, 1]", self.kd_weight)));
        }
        if !(self.kd_temperature > 0.0) {
            return Err(Error::param("kd temperature must be positive"));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::param("learning rate must be nonnegative"));
        }
        if let TrainMode::Dsnn { ratios } = &self.mode {
            if ratios.is_empty() || ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
                return Err(Error::param("dsnn needs a nonempty list of ratios in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// What one optimizer step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub cap: f64,
    /// Configurations as sampled, before the warm-up cap.
    pub configs: Vec<SparsityConfig>,
    /// Per-layer sparsities actually applied.
    pub effective: Vec<Vec<f64>>,
    pub task_losses: Vec<f64>,
    pub distill_losses: Vec<Option<f64>>,
    /// Per sub-network objective: `(1 − α)·task + α·distill`, or task alone.
    pub losses: Vec<f64>,
    pub total_loss: f64,
    /// Forward+backward passes over one full batch, counting gradient-free
    /// teacher forwards at [`FORWARD_COST`].
    pub batch_equivalents: f64,
    pub elapsed: Duration,
}

/// Hook into the step between backward and the optimizer update.
pub trait StepObserver {
    fn after_backward(&mut self, _step: u64, _model: &SupernetModel) {}
}

impl StepObserver for () {}

/// Where distillation targets come from.
#[derive(Clone, Copy)]
pub enum Teacher<'a> {
    None,
    /// The model's own dense forward pass, gradient-free.
    InPlace,
    /// A separate frozen dense model.
    Frozen(&'a SupernetModel),
}

/// Value and node of one sub-network objective recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SubnetLoss {
    pub node: NodeId,
    pub task: f64,
    pub distill: Option<f64>,
    pub total: f64,
}

/// Records `(1 − α)·task + α·distill` for one sub-network on `tape`.
///
/// With `teacher_logits = None` or `kd_weight = 0` the objective is the task
/// loss alone.
#[allow(clippy::too_many_arguments)]
pub fn subnet_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &SupernetModel,
    scores: &LayerScores,
    sparsities: &[f64],
    x: &Tensor,
    labels: &[usize],
    teacher_logits: Option<&Tensor>,
    kd_weight: f64,
    temperature: f64,
    rng: &mut R,
) -> Result<SubnetLoss> {
    let masks = model.masks(scores, sparsities)?;
    let xn = tape.constant(x.clone());
    let logits = model.forward(tape, xn, sparsities, &masks, Mode::Train, rng)?;
    let task = tape.cross_entropy(logits, labels)?;
    let task_value = tape.scalar(task);
    match teacher_logits {
        Some(t) if kd_weight > 0.0 => {
            let kd = tape.distill(logits, t, temperature)?;
            let kd_value = tape.scalar(kd);
            let node = tape.weighted_sum(&[(task, 1.0 - kd_weight), (kd, kd_weight)])?;
            Ok(SubnetLoss {
                node,
                task: task_value,
                distill: Some(kd_value),
                total: tape.scalar(node),
            })
        }
        _ => Ok(SubnetLoss {
            node: task,
            task: task_value,
            distill: None,
            total: task_value,
        }),
    }
}

/// Dense eval-mode logits used as distillation targets.
pub fn teacher_logits(model: &SupernetModel, x: &Tensor) -> Result<Tensor> {
    let dense = vec![0.0; model.num_prunable()];
    let masks = vec![None; model.num_prunable()];
    model.eval_logits_masked(&masks, &dense, x)
}

struct Entry<'a> {
    config: SparsityConfig,
    effective: Vec<f64>,
    rows: Range<usize>,
    teacher: Teacher<'a>,
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::Numeric(_) => Error::Divergence { step, loss: f64::NAN },
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_entries<R: Rng + ?Sized>(
    model: &mut SupernetModel,
    x: &Tensor,
    labels: &[usize],
    step: u64,
    cap: f64,
    entries: Vec<Entry<'_>>,
    cfg: &TrainConfig,
    rng: &mut R,
    observer: &mut dyn StepObserver,
) -> Result<StepMetrics> {
    let start = Instant::now();
    let batch = labels.len() as f64;
    let scores = model.layer_scores()?;
    let mut tape = Tape::new();
    let mut metrics = StepMetrics {
        step,
        cap,
        configs: Vec::with_capacity(entries.len()),
        effective: Vec::with_capacity(entries.len()),
        task_losses: Vec::with_capacity(entries.len()),
        distill_losses: Vec::with_capacity(entries.len()),
        losses: Vec::with_capacity(entries.len()),
        total_loss: 0.0,
        batch_equivalents: 0.0,
        elapsed: Duration::ZERO,
    };
    let mut terms = Vec::with_capacity(entries.len());
    let weight = 1.0 / entries.len() as f64;

    for entry in entries {
        let idx: Vec<usize> = entry.rows.clone().collect();
        let xs = x.select_rows(&idx);
        let ys = &labels[entry.rows.clone()];
        let share = ys.len() as f64 / batch;
        let target = match entry.teacher {
            _ if cfg.kd_weight == 0.0 => None,
            Teacher::None => None,
            Teacher::InPlace => Some(teacher_logits(model, &xs).map_err(|e| diverged(step, e))?),
            Teacher::Frozen(t) => Some(teacher_logits(t, &xs).map_err(|e| diverged(step, e))?),
        };
        if target.is_some() {
            metrics.batch_equivalents += share * FORWARD_COST;
        }
        let loss = subnet_loss(
            &mut tape,
            model,
            &scores,
            &entry.effective,
            &xs,
            ys,
            target.as_ref(),
            cfg.kd_weight,
            cfg.kd_temperature,
            rng,
        )
        .map_err(|e| diverged(step, e))?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step, loss: loss.total });
        }
        metrics.batch_equivalents += share;
        metrics.configs.push(entry.config);
        metrics.effective.push(entry.effective);
        metrics.task_losses.push(loss.task);
        metrics.distill_losses.push(loss.distill);
        metrics.losses.push(loss.total);
        terms.push((loss.node, weight));
    }

    let total = tape.weighted_sum(&terms)?;
    metrics.total_loss = tape.scalar(total);
    if !metrics.total_loss.is_finite() {
        return Err(Error::Divergence {
            step,
            loss: metrics.total_loss,
        });
    }
    tape.backward(total, &mut model.params)?;
    observer.after_backward(step, model);
    model.adam.step(&mut model.params)?;
    metrics.elapsed = start.elapsed();
    Ok(metrics)
}

/// Supernet step: sandwich-sample four configurations, cap them by the
/// warm-up schedule, train each on its quarter of the batch (sparse ones
/// distilled from the dense logits) and take one Adam step on the mean loss.
#[allow(clippy::too_many_arguments)]
pub fn supernet_train_step<R: Rng + ?Sized>(
    model: &mut SupernetModel,
    x: &Tensor,
    labels: &[usize],
    step: u64,
    space: &SearchSpace,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepMetrics> {
    supernet_train_step_observed(model, x, labels, step, space, cfg, rng, &mut ())
}

#[allow(clippy::too_many_arguments)]
pub fn supernet_train_step_observed<R: Rng + ?Sized>(
    model: &mut SupernetModel,
    x: &Tensor,
    labels: &[usize],
    step: u64,
    space: &SearchSpace,
    cfg: &TrainConfig,
    rng: &mut R,
    observer: &mut dyn StepObserver,
) -> Result<StepMetrics> {
    if space.num_layers() != model.num_prunable() {
        return Err(Error::param("search space and model disagree on layer count"));
    }
    let cap = cubic_max_sparsity(step, &cfg.schedule);
    let configs = sandwich_sample(space, rng);
    let partition = split_batch(labels.len(), 4)?;
    let entries = configs
        .into_iter()
        .zip(partition.parts)
        .enumerate()
        .map(|(i, (config, rows))| Entry {
            effective: clamp_config(config.ratios(), cap),
            config,
            rows,
            teacher: if i == 0 { Teacher::None } else { Teacher::InPlace },
        })
        .collect();
    run_entries(model, x, labels, step, cap, entries, cfg, rng, observer)
}

/// One step on a fixed configuration over the full batch.
#[allow(clippy::too_many_arguments)]
pub fn single_train_step<R: Rng + ?Sized>(
    model: &mut SupernetModel,
    x: &Tensor,
    labels: &[usize],
    step: u64,
    config: &SparsityConfig,
    teacher: Teacher<'_>,
    cfg: &TrainConfig,
    rng: &mut R,
    observer: &mut dyn StepObserver,
) -> Result<StepMetrics> {
    if config.len() != model.num_prunable() {
        return Err(Error::param("config and model disagree on layer count"));
    }
    let cap = cubic_max_sparsity(step, &cfg.schedule);
    let entries = vec![Entry {
        effective: clamp_config(config.ratios(), cap),
        config: config.clone(),
        rows: 0..labels.len(),
        teacher,
    }];
    run_entries(model, x, labels, step, cap, entries, cfg, rng, observer)
}

/// One step of joint training over fixed uniform sparsities, each seeing
/// the full batch.
#[allow(clippy::too_many_arguments)]
pub fn dsnn_train_step<R: Rng + ?Sized>(
    model: &mut SupernetModel,
    x: &Tensor,
    labels: &[usize],
    step: u64,
    ratios: &[f64],
    cfg: &TrainConfig,
    rng: &mut R,
    observer: &mut dyn StepObserver,
) -> Result<StepMetrics> {
    let cap = cubic_max_sparsity(step, &cfg.schedule);
    let layers = model.num_prunable();
    let entries = ratios
        .iter()
        .map(|&r| {
            let config = SparsityConfig::uniform(r, layers);
            Entry {
                effective: clamp_config(config.ratios(), cap),
                config,
                rows: 0..labels.len(),
                teacher: Teacher::None,
            }
        })
        .collect();
    run_entries(model, x, labels, step, cap, entries, cfg, rng, observer)
}
