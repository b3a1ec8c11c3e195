//! Post-training search for the loss-vs-size Pareto front.

mod evolution;
mod pareto;

pub use evolution::{
    brute_force_front, brute_force_front_with, crossover, evolutionary_search, evolutionary_search_with, mutate,
    SearchParams, ENUMERATION_LIMIT,
};
pub use pareto::{
    canonical_cmp, dominates, hypervolume, select_for_constraint, update_front, Candidate, ParetoFront,
};
