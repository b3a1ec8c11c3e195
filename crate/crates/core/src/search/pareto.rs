use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::sparsity::SparsityConfig;

/// A scored sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub config: SparsityConfig,
    pub val_loss: f64,
    pub size_bytes: u64,
}

/// Pareto dominance for minimization of both loss and size.
pub fn dominates(a: &Candidate, b: &Candidate) -> bool {
    a.val_loss <= b.val_loss
        && a.size_bytes <= b.size_bytes
        && (a.val_loss < b.val_loss || a.size_bytes < b.size_bytes)
}

/// Canonical order: size, then loss, then config.
pub fn canonical_cmp(a: &Candidate, b: &Candidate) -> Ordering {
    a.size_bytes
        .cmp(&b.size_bytes)
        .then(a.val_loss.total_cmp(&b.val_loss))
        .then_with(|| a.config.lex_cmp(&b.config))
}

/// Non-dominated archive plus the log of everything ever scored.
#[derive(Clone, Debug, Default)]
pub struct ParetoFront {
    members: Vec<Candidate>,
    log: Vec<Candidate>,
    seen: HashSet<Vec<u64>>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    /// Members in canonical order (ascending size).
    pub fn members(&self) -> &[Candidate] {
        &self.members
    }

    pub fn log(&self) -> &[Candidate] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains_config(&self, config: &SparsityConfig) -> bool {
        self.seen.contains(&config.key())
    }

    /// Logs `cand` and inserts it unless some member dominates it; members
    /// it dominates are dropped. Returns whether it joined the front.
    ///
    /// A config that was already logged is ignored.
    pub fn update(&mut self, cand: Candidate) -> bool {
        if !self.seen.insert(cand.config.key()) {
            return false;
        }
        self.log.push(cand.clone());
        if self.members.iter().any(|m| dominates(m, &cand)) {
            return false;
        }
        self.members.retain(|m| !dominates(&cand, m));
        let pos = self
            .members
            .binary_search_by(|m| canonical_cmp(m, &cand))
            .unwrap_or_else(|p| p);
        self.members.insert(pos, cand);
        true
    }

    /// 2-D hypervolume dominated by the front inside the box bounded by
    /// `(ref_loss, ref_size)`.
    pub fn hypervolume(&self, ref_loss: f64, ref_size: f64) -> f64 {
        hypervolume(&self.members, ref_loss, ref_size)
    }

    /// Reference point `(max observed loss, max observed size)` over the log.
    pub fn log_reference(&self) -> (f64, f64) {
        self.log.iter().fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(l, s), c| {
            (l.max(c.val_loss), s.max(c.size_bytes as f64))
        })
    }
}

/// Standalone `update_front`.
pub fn update_front(front: &mut ParetoFront, cand: Candidate) -> bool {
    front.update(cand)
}

/// Hypervolume of arbitrary points (dominated ones contribute nothing).
pub fn hypervolume(points: &[Candidate], ref_loss: f64, ref_size: f64) -> f64 {
    let mut pts: Vec<&Candidate> = points
        .iter()
        .filter(|c| c.val_loss <= ref_loss && (c.size_bytes as f64) <= ref_size)
        .collect();
    pts.sort_by(|a, b| canonical_cmp(a, b));
    let mut best = ref_loss;
    let mut hv = 0.0;
    for p in pts {
        if p.val_loss < best {
            hv += (ref_size - p.size_bytes as f64) * (best - p.val_loss);
            best = p.val_loss;
        }
    }
    hv
}

/// Picks the lowest-loss member whose size fits `tau` bytes (ties: smaller
/// size, then lexicographically smaller config).
pub fn select_for_constraint(front: &ParetoFront, tau: u64) -> Result<&Candidate> {
    if tau == 0 {
        return Err(Error::param("size constraint must be positive"));
    }
    let min_size = front
        .members()
        .iter()
        .map(|c| c.size_bytes)
        .min()
        .ok_or_else(|| Error::param("empty Pareto front"))?;
    front
        .members()
        .iter()
        .filter(|c| c.size_bytes <= tau)
        .min_by(|a, b| {
            a.val_loss
                .total_cmp(&b.val_loss)
                .then(a.size_bytes.cmp(&b.size_bytes))
                .then_with(|| a.config.lex_cmp(&b.config))
        })
        .ok_or(Error::Infeasible { tau, min_size })
}
