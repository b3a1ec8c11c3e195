use crate::error::{Error, Result};

/// Warm-up of the maximum allowed sparsity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub final_max_sparsity: f64,
    pub ramp_steps: u64,
    pub update_interval: u64,
}

impl ScheduleConfig {
    pub const DEFAULT_INTERVAL: u64 = 256;

    pub fn new(final_max_sparsity: f64, ramp_steps: u64, update_interval: u64) -> Result<Self> {
        if !(final_max_sparsity > 0.0 && final_max_sparsity < 1.0) {
            return Err(Error::param(format!(
                "final max sparsity {final_max_sparsity} outside (0, 1)"
            )));
        }
        if update_interval == 0 || ramp_steps == 0 || ramp_steps % update_interval != 0 {
            return Err(Error::param(format!(
                "ramp of {ramp_steps} steps is not a positive multiple of the interval {update_interval}"
            )));
        }
        Ok(Self {
            final_max_sparsity,
            ramp_steps,
            update_interval,
        })
    }
}

/// Cubic ramp `s_f · (1 − (1 − t'/T)³)` with `t'` held constant within each
/// update interval and clamped to the ramp length.
pub fn cubic_max_sparsity(step: u64, cfg: &ScheduleConfig) -> f64 {
    let held = (step / cfg.update_interval) * cfg.update_interval;
    let t = held.min(cfg.ramp_steps) as f64 / cfg.ramp_steps as f64;
    let remaining = 1.0 - t;
    cfg.final_max_sparsity * (1.0 - remaining * remaining * remaining)
}

/// Caps every layer's sparsity at `cap`.
pub fn clamp_config(ratios: &[f64], cap: f64) -> Vec<f64> {
    ratios.iter().map(|&r| r.min(cap)).collect()
}
