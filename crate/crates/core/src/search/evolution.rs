//! Evolutionary search over layerwise sparsity configurations.
//!
//! Each iteration draws parents uniformly from the current front, breeds
//! children by crossover+mutation or mutation alone, skips configurations
//! already scored, evaluates the rest and folds them into the front. When
//! the operators keep reproducing known configurations a random unseen one
//! is injected instead, so a budget at least as large as the space always
//! ends in exhaustive coverage.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::pareto::{Candidate, ParetoFront};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::sparsity::{model_size_bytes, ArchSizes, SearchSpace, SparsityConfig};
use crate::trainer::{Evaluator, SupernetModel};

/// Upper bound on configurations enumerated by exhaustive routines.
pub const ENUMERATION_LIMIT: u128 = 100_000;

const OPERATOR_RETRIES: usize = 32;
const RANDOM_RETRIES: usize = 64;

/// Resamples each gene with probability `p_m` from the sampleable ratios.
pub fn mutate<R: Rng + ?Sized>(config: &SparsityConfig, p_m: f64, space: &SearchSpace, rng: &mut R) -> SparsityConfig {
    let choices = space.sampleable();
    let mut child = config.clone();
    for gene in child.ratios_mut() {
        if rng.gen::<f64>() < p_m {
            *gene = choices[rng.gen_range(0..choices.len())];
        }
    }
    child
}

/// Uniform crossover: each gene from either parent with probability 1/2.
pub fn crossover<R: Rng + ?Sized>(a: &SparsityConfig, b: &SparsityConfig, rng: &mut R) -> SparsityConfig {
    let mut child = a.clone();
    for (gene, &other) in child.ratios_mut().iter_mut().zip(b.ratios()) {
        if rng.gen::<bool>() {
            *gene = other;
        }
    }
    child
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchParams {
    /// Random configurations scored in iteration 0, besides the uniform ones.
    pub initial_population: usize,
    pub children_per_iter: usize,
    /// Per-gene mutation probability; `None` means `1 / L`.
    pub mutation_prob: Option<f64>,
    /// Share of children bred by crossover-then-mutate.
    pub crossover_fraction: f64,
    pub seed: u64,
    /// Score the whole space in iteration 0 when it fits in the budget.
    pub exhaustive_init: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            initial_population: 32,
            children_per_iter: 16,
            mutation_prob: None,
            crossover_fraction: 0.5,
            seed: 0,
            exhaustive_init: false,
        }
    }
}

fn random_unseen<R: Rng + ?Sized>(
    space: &SearchSpace,
    front: &ParetoFront,
    pending: &[SparsityConfig],
    rng: &mut R,
) -> Option<SparsityConfig> {
    let is_new = |c: &SparsityConfig| !front.contains_config(c) && !pending.contains(c);
    for _ in 0..RANDOM_RETRIES {
        let c = space.sample(rng);
        if is_new(&c) {
            return Some(c);
        }
    }
    if space.num_configs() <= ENUMERATION_LIMIT {
        let unseen: Vec<SparsityConfig> = space.enumerate().filter(|c| is_new(c)).collect();
        return unseen.choose(rng).cloned();
    }
    None
}

fn score_all<F>(objective: &F, arch: &ArchSizes, configs: Vec<SparsityConfig>) -> Result<Vec<Candidate>>
where
    F: Fn(&SparsityConfig) -> Result<f64> + Sync,
{
    configs
        .into_par_iter()
        .map(|config| {
            let val_loss = objective(&config)?;
            let size_bytes = model_size_bytes(config.ratios(), arch)?;
            Ok(Candidate {
                config,
                val_loss,
                size_bytes,
            })
        })
        .collect()
}

/// Runs the search against an arbitrary deterministic objective.
///
/// `budget` counts distinct scored configurations. The result does not
/// depend on how evaluations are scheduled across threads.
pub fn evolutionary_search_with<F>(
    objective: F,
    space: &SearchSpace,
    arch: &ArchSizes,
    budget: usize,
    params: &SearchParams,
) -> Result<ParetoFront>
where
    F: Fn(&SparsityConfig) -> Result<f64> + Sync,
{
    if arch.num_prunable() != space.num_layers() {
        return Err(Error::param("architecture and search space disagree on layer count"));
    }
    if !(0.0..=1.0).contains(&params.crossover_fraction) {
        return Err(Error::param("crossover fraction outside [0, 1]"));
    }
    let p_m = params.mutation_prob.unwrap_or(1.0 / space.num_layers() as f64);
    if !(0.0..=1.0).contains(&p_m) {
        return Err(Error::param(format!("mutation probability {p_m} outside [0, 1]")));
    }
    let space_size = space.num_configs();
    let cap = |n: usize| (n as u128).min(space_size) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut front = ParetoFront::new();

    // Iteration 0.
    let exhaustive = params.exhaustive_init && space_size <= ENUMERATION_LIMIT && space_size <= budget as u128;
    let initial: Vec<SparsityConfig> = if exhaustive {
        space.enumerate().collect()
    } else {
        let target = cap(space.uniform_configs().len() + params.initial_population);
        if budget < target {
            return Err(Error::param(format!(
                "budget {budget} is smaller than the initial population of {target}"
            )));
        }
        let mut init = space.uniform_configs();
        while init.len() < target {
            match random_unseen(space, &front, &init, &mut rng) {
                Some(c) => init.push(c),
                None => break,
            }
        }
        init
    };
    for cand in score_all(&objective, arch, initial)? {
        front.update(cand);
    }

    let n_cross = (params.children_per_iter as f64 * params.crossover_fraction).round() as usize;
    while front.log().len() < budget && (front.log().len() as u128) < space_size {
        let parents: Vec<SparsityConfig> = front.members().iter().map(|c| c.config.clone()).collect();
        let mut children: Vec<SparsityConfig> = Vec::with_capacity(params.children_per_iter);
        for i in 0..params.children_per_iter {
            let mut child = None;
            for _ in 0..OPERATOR_RETRIES {
                let c = if i < n_cross {
                    let a = parents.choose(&mut rng).expect("front is nonempty");
                    let b = parents.choose(&mut rng).expect("front is nonempty");
                    mutate(&crossover(a, b, &mut rng), p_m, space, &mut rng)
                } else {
                    let a = parents.choose(&mut rng).expect("front is nonempty");
                    mutate(a, p_m, space, &mut rng)
                };
                if !front.contains_config(&c) && !children.contains(&c) {
                    child = Some(c);
                    break;
                }
            }
            let child = match child {
                Some(c) => Some(c),
                None => random_unseen(space, &front, &children, &mut rng),
            };
            match child {
                Some(c) => children.push(c),
                None => break,
            }
        }
        if children.is_empty() {
            break;
        }
        children.truncate(budget - front.log().len());
        for cand in score_all(&objective, arch, children)? {
            front.update(cand);
        }
    }
    Ok(front)
}

/// Scores every sampleable configuration and keeps the non-dominated ones.
pub fn brute_force_front_with<F>(objective: F, space: &SearchSpace, arch: &ArchSizes) -> Result<ParetoFront>
where
    F: Fn(&SparsityConfig) -> Result<f64> + Sync,
{
    let size = space.num_configs();
    if size > ENUMERATION_LIMIT {
        return Err(Error::SpaceTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut front = ParetoFront::new();
    for cand in score_all(&objective, arch, space.enumerate().collect())? {
        front.update(cand);
    }
    Ok(front)
}

/// Objective: validation loss of the sub-network, masks from the frozen
/// model's current weights and Adam state.
fn model_objective<'a>(eval: &'a Evaluator<'a>, valset: &'a Dataset) -> impl Fn(&SparsityConfig) -> Result<f64> + Sync + 'a {
    move |c| eval.loss(c.ratios(), valset)
}

pub fn evolutionary_search(
    model: &SupernetModel,
    space: &SearchSpace,
    valset: &Dataset,
    budget: usize,
    params: &SearchParams,
) -> Result<ParetoFront> {
    let eval = Evaluator::new(model)?;
    let arch = model.arch.sizes(1);
    evolutionary_search_with(model_objective(&eval, valset), space, &arch, budget, params)
}

pub fn brute_force_front(model: &SupernetModel, space: &SearchSpace, valset: &Dataset) -> Result<ParetoFront> {
    let eval = Evaluator::new(model)?;
    let arch = model.arch.sizes(1);
    brute_force_front_with(model_objective(&eval, valset), space, &arch)
}
