//! Sparsity as data: search space, masks, schedule and size accounting.

mod mask;
mod schedule;
mod score;
mod size;
mod space;

pub use mask::{BlockMask, BlockShape};
pub use schedule::{clamp_config, cubic_max_sparsity, ScheduleConfig};
pub use score::{adam_prune_score, block_scores, build_block_mask, gradient_score, magnitude_score};
pub use size::{model_size_bytes, ArchSizes, LayerSize};
pub use space::{pruned_block_count, SearchSpace, SparsityConfig};

use crate::error::{Error, Result};

/// Dropout rate for a layer pruned to sparsity `s`: `0.1 · (1 − s)`.
pub fn adaptive_dropout_rate(s: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::param(format!("sparsity {s} outside [0, 1)")));
    }
    Ok(0.1 * (1.0 - s))
}
