use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam optimizer state for every parameter of a [`ParamStore`].
///
/// Weights that are masked out in a forward pass receive an exact zero
/// gradient, so their `m` and `v` keep decaying by `beta1` / `beta2` rather
/// than being frozen. The second moments are read back by the pruning
/// criterion, hence the public accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments {
                m: vec![0.0; p.value.len()],
                v: vec![0.0; p.value.len()],
            })
            .collect();
        Self {
            config,
            step_count: 0,
            moments,
        }
    }

    pub fn from_parts(config: AdamConfig, step_count: u64, moments: Vec<Moments>) -> Self {
        Self {
            config,
            step_count,
            moments,
        }
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.moments[index].v
    }

    /// Bias correction factor `1 - beta2^t` for the current step count.
    pub fn v_correction(&self) -> f64 {
        1.0 - self.config.beta2.powi(self.step_count.min(i32::MAX as u64) as i32)
    }

    /// Applies one bias-corrected Adam update and zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if !params.grads_ready() {
            return Err(Error::State(
                "optimizer step requested without fresh gradients".into(),
            ));
        }
        if self.moments.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, store has {}",
                self.moments.len(),
                params.len()
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (p, mom) in params.iter_mut().zip(&mut self.moments) {
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_slice();
            for i in 0..values.len() {
                let g = grads[i];
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
                let m_hat = mom.m[i] / c1;
                let v_hat = mom.v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}
