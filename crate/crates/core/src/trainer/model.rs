use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparsity::{
    adam_prune_score, adaptive_dropout_rate, block_scores, build_block_mask, magnitude_score, ArchSizes, BlockMask,
    BlockShape, LayerSize,
};
use crate::tensor::{AdamConfig, AdamState, Mode, NodeId, ParamId, ParamStore, Tape, Tensor};

/// Dropout rate on the non-prunable input projection (the `s = 0` rate).
pub const DENSE_DROPOUT: f64 = 0.1;

/// Added inside the square root of the Adam-pruning score.
pub const PRUNE_SCORE_EPS: f64 = 1e-12;

/// MLP shape: `input_dim → hidden` projection, `layers` prunable
/// `hidden → hidden` layers, `hidden → classes` output projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.classes < 2 {
            return Err(Error::param(format!("invalid architecture {self:?}")));
        }
        if self.hidden % BlockShape::EIGHT_BY_ONE.rows != 0 {
            return Err(Error::shape(format!(
                "hidden width {} must be divisible by {}",
                self.hidden,
                BlockShape::EIGHT_BY_ONE.rows
            )));
        }
        Ok(())
    }

    pub fn sizes(&self, bytes_per_weight: u64) -> ArchSizes {
        let (d, h, c) = (self.input_dim as u64, self.hidden as u64, self.classes as u64);
        let mut layers = vec![LayerSize {
            rows: h,
            cols: d,
            prunable: false,
        }];
        layers.extend((0..self.layers).map(|_| LayerSize {
            rows: h,
            cols: h,
            prunable: true,
        }));
        layers.push(LayerSize {
            rows: c,
            cols: h,
            prunable: false,
        });
        let biases = h * (1 + self.layers as u64) + c;
        ArchSizes::new(layers, biases, bytes_per_weight).expect("validated architecture")
    }
}

/// Which per-weight importance drives the block masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneCriterion {
    /// `|w| · sqrt(v̂)` from Adam's second moments.
    Adam,
    /// `|w|`.
    Magnitude,
}

impl PruneCriterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneCriterion::Adam => "adam",
            PruneCriterion::Magnitude => "magnitude",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(PruneCriterion::Adam),
            "magnitude" => Ok(PruneCriterion::Magnitude),
            other => Err(Error::param(format!("unknown prune criterion {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// The shared supernet: one parameter set, one Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct SupernetModel {
    pub arch: ModelArch,
    pub params: ParamStore,
    pub adam: AdamState,
    pub criterion: PruneCriterion,
    input: LinearIds,
    hidden: Vec<LinearIds>,
    output: LinearIds,
}

/// Per-layer block scores of the prunable layers at one point in training.
#[derive(Clone, Debug)]
pub struct LayerScores(pub Vec<Vec<f64>>);

impl SupernetModel {
    pub fn new(arch: ModelArch, adam: AdamConfig, criterion: PruneCriterion, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(crate::trainer::INIT_STREAM);
        let mut params = ParamStore::new();
        let mut layer = |params: &mut ParamStore, name: &str, out: usize, inp: usize, gain: f64| {
            let bound = gain * (6.0 / inp as f64).sqrt();
            let w: Vec<f64> = (0..out * inp).map(|_| rng.gen_range(-bound..bound)).collect();
            LinearIds {
                weight: params.add(format!("{name}.weight"), Tensor::matrix(out, inp, w).expect("sized")),
                bias: params.add(format!("{name}.bias"), Tensor::zeros(&[out])),
            }
        };
        let input = layer(&mut params, "input", arch.hidden, arch.input_dim, 1.0);
        let hidden = (0..arch.layers)
            .map(|l| layer(&mut params, &format!("hidden{l}"), arch.hidden, arch.hidden, 1.0))
            .collect();
        // Small output weights keep initial predictions close to uniform.
        let output = layer(&mut params, "output", arch.classes, arch.hidden, 0.1);
        let adam = AdamState::new(adam, &params);
        Ok(Self {
            arch,
            params,
            adam,
            criterion,
            input,
            hidden,
            output,
        })
    }

    /// Rebuilds a model around existing parameters and optimizer state, as
    /// laid out by [`SupernetModel::new`].
    pub fn from_parts(arch: ModelArch, params: ParamStore, adam: AdamState, criterion: PruneCriterion) -> Result<Self> {
        arch.validate()?;
        let expected = 2 * (arch.layers + 2);
        if params.len() != expected || adam.moments().len() != expected {
            return Err(Error::State(format!(
                "expected {expected} parameter tensors, got {} (optimizer {})",
                params.len(),
                adam.moments().len()
            )));
        }
        let ids = |i: usize| LinearIds {
            weight: ParamId(2 * i),
            bias: ParamId(2 * i + 1),
        };
        let shapes_ok = |ids: LinearIds, out: usize, inp: usize| {
            params.value(ids.weight).shape() == [out, inp] && params.value(ids.bias).shape() == [out]
        };
        let input = ids(0);
        let hidden: Vec<_> = (0..arch.layers).map(|l| ids(l + 1)).collect();
        let output = ids(arch.layers + 1);
        let ok = shapes_ok(input, arch.hidden, arch.input_dim)
            && hidden.iter().all(|&h| shapes_ok(h, arch.hidden, arch.hidden))
            && shapes_ok(output, arch.classes, arch.hidden);
        if !ok {
            return Err(Error::shape("parameter shapes do not match the architecture"));
        }
        Ok(Self {
            arch,
            params,
            adam,
            criterion,
            input,
            hidden,
            output,
        })
    }

    pub fn num_prunable(&self) -> usize {
        self.hidden.len()
    }

    pub fn prunable_ids(&self) -> &[LinearIds] {
        &self.hidden
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape::EIGHT_BY_ONE
    }

    /// Current block scores of every prunable layer under the model's
    /// criterion.
    pub fn layer_scores(&self) -> Result<LayerScores> {
        self.layer_scores_with(self.criterion)
    }

    pub fn layer_scores_with(&self, criterion: PruneCriterion) -> Result<LayerScores> {
        let h = self.arch.hidden;
        self.hidden
            .iter()
            .map(|ids| {
                let w = self.params.value(ids.weight).as_slice();
                let per_weight = match criterion {
                    PruneCriterion::Adam => adam_prune_score(
                        w,
                        self.adam.second_moment(ids.weight.0),
                        self.adam.step_count,
                        self.adam.config.beta2,
                        PRUNE_SCORE_EPS,
                    )?,
                    PruneCriterion::Magnitude => magnitude_score(w),
                };
                block_scores(&per_weight, h, h, self.block_shape())
            })
            .collect::<Result<Vec<_>>>()
            .map(LayerScores)
    }

    /// One mask per prunable layer; `None` where the layer is dense.
    pub fn masks(&self, scores: &LayerScores, sparsities: &[f64]) -> Result<Vec<Option<BlockMask>>> {
        if sparsities.len() != self.hidden.len() {
            return Err(Error::param(format!(
                "{} sparsities for {} prunable layers",
                sparsities.len(),
                self.hidden.len()
            )));
        }
        let h = self.arch.hidden;
        scores
            .0
            .iter()
            .zip(sparsities)
            .map(|(bs, &s)| {
                if s == 0.0 {
                    Ok(None)
                } else {
                    build_block_mask(bs, h, h, self.block_shape(), s).map(Some)
                }
            })
            .collect()
    }

    /// Records a sub-network forward pass on `tape` and returns the logits.
    ///
    /// Each prunable layer is masked at its sparsity and followed by ReLU
    /// and adaptive dropout; the input projection uses the dense rate.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: NodeId,
        sparsities: &[f64],
        masks: &[Option<BlockMask>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<NodeId> {
        let mut h = tape.linear(&self.params, x, self.input.weight, self.input.bias, None)?;
        h = tape.relu(h);
        h = tape.dropout(h, DENSE_DROPOUT, mode, rng)?;
        for ((ids, mask), &s) in self.hidden.iter().zip(masks).zip(sparsities) {
            h = tape.linear(&self.params, h, ids.weight, ids.bias, mask.as_ref())?;
            h = tape.relu(h);
            h = tape.dropout(h, adaptive_dropout_rate(s)?, mode, rng)?;
        }
        tape.linear(&self.params, h, self.output.weight, self.output.bias, None)
    }

    /// Eval-mode logits without keeping a tape around.
    pub fn eval_logits(&self, scores: &LayerScores, sparsities: &[f64], x: &Tensor) -> Result<Tensor> {
        let masks = self.masks(scores, sparsities)?;
        self.eval_logits_masked(&masks, sparsities, x)
    }

    pub(crate) fn eval_logits_masked(
        &self,
        masks: &[Option<BlockMask>],
        sparsities: &[f64],
        x: &Tensor,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward(&mut tape, xn, sparsities, masks, Mode::Eval, &mut no_rng)?;
        Ok(tape.value(out).clone())
    }

    /// Zeroes the pruned weights of every prunable layer in place.
    pub fn apply_masks(&mut self, masks: &[Option<BlockMask>]) {
        for (ids, mask) in self.hidden.iter().zip(masks) {
            if let Some(m) = mask {
                let mult = m.weight_multipliers();
                for (w, k) in self.params.get_mut(ids.weight).value.as_mut_slice().iter_mut().zip(mult) {
                    if k == 0.0 {
                        *w = 0.0;
                    }
                }
            }
        }
    }

    /// SHA-256 over parameter values, Adam moments and step count.
    pub fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter() {
            for v in p.value.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        for m in self.adam.moments() {
            for v in m.m.iter().chain(&m.v) {
                h.update(v.to_le_bytes());
            }
        }
        h.update(self.adam.step_count.to_le_bytes());
        hex::encode(h.finalize())
    }
}
