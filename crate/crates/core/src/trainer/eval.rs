use super::model::{LayerScores, SupernetModel};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::tensor::cross_entropy_per_example;

const EVAL_CHUNK: usize = 512;

/// Eval-mode loss computation against a frozen model.
///
/// Block scores are computed once up front; the model is only borrowed, so
/// evaluations can run concurrently.
pub struct Evaluator<'a> {
    model: &'a SupernetModel,
    scores: LayerScores,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a SupernetModel) -> Result<Self> {
        Ok(Self {
            scores: model.layer_scores()?,
            model,
        })
    }

    pub fn model(&self) -> &SupernetModel {
        self.model
    }

    /// Mean task loss over `data` with each prunable layer at the given
    /// sparsity. Deterministic: no dropout, fixed summation order.
    pub fn loss(&self, sparsities: &[f64], data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::param("cannot evaluate on an empty dataset"));
        }
        let masks = self.model.masks(&self.scores, sparsities)?;
        let n = data.len();
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let (x, y) = data.gather(&idx);
            let logits = self.model.eval_logits_masked(&masks, sparsities, &x)?;
            total += cross_entropy_per_example(&logits, &y)?.iter().sum::<f64>();
            start = end;
        }
        Ok(total / n as f64)
    }
}

pub fn evaluate(model: &SupernetModel, sparsities: &[f64], data: &Dataset) -> Result<f64> {
    Evaluator::new(model)?.loss(sparsities, data)
}
