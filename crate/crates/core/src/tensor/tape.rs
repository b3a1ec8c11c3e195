//! Matrix-level reverse-mode autodiff.
//!
//! A [`Tape`] records the forward computation as a list of nodes in
//! evaluation order. Parameters are not nodes: linear layers read their
//! weights from a [`ParamStore`] and `backward` accumulates straight into the
//! store's gradient buffers.

use rand::Rng;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::sparsity::BlockMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Train mode samples dropout; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        keep: Option<Vec<f64>>,
    },
    Relu {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        scale: Vec<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Distill {
        student: NodeId,
        student_probs: Vec<f64>,
        teacher_probs: Vec<f64>,
        temperature: f64,
    },
    WeightedSum {
        terms: Vec<(NodeId, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients of the loss with respect to every tape node.
///
/// Leaves that the loss does not depend on (for example distillation
/// teacher logits) report `None`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

/// `x · (W ⊙ mask)ᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor, mask: Option<&BlockMask>) -> Result<Tensor> {
    let keep = match mask {
        Some(m) => {
            if m.shape() != (w.rows(), w.cols()) {
                return Err(Error::shape(format!(
                    "mask {:?} does not match weight {:?}",
                    m.shape(),
                    w.shape()
                )));
            }
            Some(m.weight_multipliers())
        }
        None => None,
    };
    linear_with_multipliers(x, w, b, keep.as_deref())
}

fn linear_with_multipliers(x: &Tensor, w: &Tensor, b: &Tensor, keep: Option<&[f64]>) -> Result<Tensor> {
    if x.shape().len() != 2 || w.shape().len() != 2 {
        return Err(Error::shape("linear expects rank-2 input and weight"));
    }
    let (batch, inp) = (x.rows(), x.cols());
    let out = w.rows();
    if w.cols() != inp {
        return Err(Error::shape(format!(
            "input has {inp} features, weight expects {}",
            w.cols()
        )));
    }
    if b.len() != out {
        return Err(Error::shape(format!("bias has {} entries, expected {out}", b.len())));
    }
    x.ensure_finite("linear input")?;

    let masked;
    let weights: &[f64] = match keep {
        Some(k) => {
            masked = w.as_slice().iter().zip(k).map(|(w, k)| w * k).collect::<Vec<_>>();
            &masked
        }
        None => w.as_slice(),
    };
    let xs = x.as_slice();
    let bs = b.as_slice();
    let mut y = vec![0.0; batch * out];
    for r in 0..batch {
        let xr = &xs[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wr = &weights[o * inp..(o + 1) * inp];
            let mut acc = 0.0;
            for i in 0..inp {
                acc += xr[i] * wr[i];
            }
            y[r * out + o] = acc + bs[o];
        }
    }
    Tensor::matrix(batch, out, y)
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.as_slice().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Softmax of each row of `logits / temperature`.
fn softmax_rows(logits: &Tensor, temperature: f64) -> Vec<f64> {
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let exps: Vec<f64> = row.iter().map(|&z| (z / temperature - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    debug_assert_eq!(out.len(), logits.rows() * c);
    out
}

fn log_sum_exp(row: &[f64], temperature: f64) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
    max + row.iter().map(|&z| (z / temperature - max).exp()).sum::<f64>().ln()
}

/// Mean softmax cross-entropy; pure counterpart of [`Tape::cross_entropy`].
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_classification(logits, labels)?;
    let c = logits.cols();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        total += log_sum_exp(row, 1.0) - row[y];
        debug_assert!(y < c);
    }
    Ok(total / labels.len() as f64)
}

/// Per-example softmax cross-entropy values.
pub fn cross_entropy_per_example(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_classification(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let row = logits.row(r);
            log_sum_exp(row, 1.0) - row[y]
        })
        .collect())
}

fn check_classification(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::param("empty batch"));
    }
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::shape(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::param(format!("label {bad} outside [0, {c})")));
    }
    logits.ensure_finite("logits")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    /// Scalar value of a loss node.
    pub fn scalar(&self, node: NodeId) -> f64 {
        self.nodes[node.0].value.as_slice()[0]
    }

    /// Records a tensor that receives no gradient flow from parameters.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn linear(
        &mut self,
        params: &ParamStore,
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        mask: Option<&BlockMask>,
    ) -> Result<NodeId> {
        params.check_id(weight)?;
        params.check_id(bias)?;
        let w = params.value(weight);
        let keep = match mask {
            Some(m) if m.shape() != (w.rows(), w.cols()) => {
                return Err(Error::shape(format!(
                    "mask {:?} does not match weight {:?}",
                    m.shape(),
                    w.shape()
                )))
            }
            Some(m) => Some(m.weight_multipliers()),
            None => None,
        };
        let y = linear_with_multipliers(self.value(input), w, params.value(bias), keep.as_deref())?;
        Ok(self.push(
            y,
            Op::Linear {
                input,
                weight,
                bias,
                keep,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let y = relu(self.value(input));
        self.push(y, Op::Relu { input })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
    ///
    /// Eval mode and a zero rate return the input node unchanged and draw
    /// nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: NodeId, rate: f64, mode: Mode, rng: &mut R) -> Result<NodeId> {
        check_dropout_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let scale: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let data = x.as_slice().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let y = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Dropout { input, scale }))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        let loss = cross_entropy(z, labels)?;
        let probs = softmax_rows(z, 1.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `T² · KL(softmax(teacher/T) ‖ softmax(student/T))`, averaged over rows.
    ///
    /// The teacher logits are plain data: no gradient ever reaches them.
    pub fn distill(&mut self, student: NodeId, teacher: &Tensor, temperature: f64) -> Result<NodeId> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::param(format!("temperature {temperature} must be positive")));
        }
        let s = self.value(student);
        if s.shape() != teacher.shape() {
            return Err(Error::shape(format!(
                "student {:?} and teacher {:?} differ",
                s.shape(),
                teacher.shape()
            )));
        }
        if s.rows() == 0 {
            return Err(Error::param("empty batch"));
        }
        s.ensure_finite("student logits")?;
        teacher.ensure_finite("teacher logits")?;
        let loss = distill_loss(s, teacher, temperature);
        let student_probs = softmax_rows(s, temperature);
        let teacher_probs = softmax_rows(teacher, temperature);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Distill {
                student,
                student_probs,
                teacher_probs,
                temperature,
            },
        ))
    }

    /// Linear combination of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(Error::param("weighted sum of nothing"));
        }
        let mut total = 0.0;
        for &(n, w) in terms {
            let v = self.value(n);
            if v.len() != 1 {
                return Err(Error::shape("weighted_sum expects scalar nodes"));
            }
            total += w * v.as_slice()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { terms: terms.to_vec() }))
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients
    /// into `params`. Masked weight positions receive exactly zero.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamStore) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        if !lv.is_finite() {
            return Err(Error::numeric("non-finite loss"));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Linear {
                    input,
                    weight,
                    bias,
                    keep,
                } => {
                    let x = &self.nodes[input.0].value;
                    let (batch, inp) = (x.rows(), x.cols());
                    let out = g.cols();
                    let gs = g.as_slice();
                    let xs = x.as_slice();

                    let mut dx = vec![0.0; batch * inp];
                    {
                        let w = params.value(*weight).as_slice();
                        let masked;
                        let w: &[f64] = match keep {
                            Some(k) => {
                                masked = w.iter().zip(k).map(|(w, k)| w * k).collect::<Vec<_>>();
                                &masked
                            }
                            None => w,
                        };
                        for r in 0..batch {
                            let dxr = &mut dx[r * inp..(r + 1) * inp];
                            for o in 0..out {
                                let go = gs[r * out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &w[o * inp..(o + 1) * inp];
                                for i in 0..inp {
                                    dxr[i] += go * wr[i];
                                }
                            }
                        }
                    }
                    {
                        let wg = params.get_mut(*weight).grad.as_mut_slice();
                        for o in 0..out {
                            for i in 0..inp {
                                if let Some(k) = keep {
                                    if k[o * inp + i] == 0.0 {
                                        continue;
                                    }
                                }
                                let mut acc = 0.0;
                                for r in 0..batch {
                                    acc += gs[r * out + o] * xs[r * inp + i];
                                }
                                wg[o * inp + i] += acc;
                            }
                        }
                    }
                    {
                        let bg = params.get_mut(*bias).grad.as_mut_slice();
                        for o in 0..out {
                            let mut acc = 0.0;
                            for r in 0..batch {
                                acc += gs[r * out + o];
                            }
                            bg[o] += acc;
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::matrix(batch, inp, dx)?);
                }
                Op::Relu { input } => {
                    let x = &self.nodes[input.0].value;
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(x.as_slice())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Dropout { input, scale } => {
                    let data = g.as_slice().iter().zip(scale).map(|(g, s)| g * s).collect();
                    accumulate(&mut grads, *input, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let upstream = g.as_slice()[0];
                    let z = &self.nodes[logits.0].value;
                    let c = z.cols();
                    let n = labels.len() as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| upstream * p / n).collect();
                    for (r, &y) in labels.iter().enumerate() {
                        d[r * c + y] -= upstream / n;
                    }
                    accumulate(&mut grads, *logits, Tensor::new(z.shape().to_vec(), d)?);
                }
                Op::Distill {
                    student,
                    student_probs,
                    teacher_probs,
                    temperature,
                } => {
                    let upstream = g.as_slice()[0];
                    let z = &self.nodes[student.0].value;
                    let n = z.rows() as f64;
                    let d = student_probs
                        .iter()
                        .zip(teacher_probs)
                        .map(|(ps, pt)| upstream * temperature * (ps - pt) / n)
                        .collect();
                    accumulate(&mut grads, *student, Tensor::new(z.shape().to_vec(), d)?);
                }
                Op::WeightedSum { terms } => {
                    let upstream = g.as_slice()[0];
                    for &(n, w) in terms {
                        accumulate(&mut grads, n, Tensor::scalar(upstream * w));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        params.mark_grads_ready();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], node: NodeId, g: Tensor) {
    match &mut grads[node.0] {
        Some(existing) => {
            for (a, b) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Distillation loss without a tape.
pub fn distill_loss(student: &Tensor, teacher: &Tensor, temperature: f64) -> f64 {
    let c = student.cols();
    let pt = softmax_rows(teacher, temperature);
    let mut total = 0.0;
    for r in 0..student.rows() {
        let lse_s = log_sum_exp(student.row(r), temperature);
        let lse_t = log_sum_exp(teacher.row(r), temperature);
        for k in 0..c {
            let p = pt[r * c + k];
            if p > 0.0 {
                let log_pt = teacher.get(r, k) / temperature - lse_t;
                let log_ps = student.get(r, k) / temperature - lse_s;
                total += p * (log_pt - log_ps);
            }
        }
    }
    temperature * temperature * total / student.rows() as f64
}

/// Standalone dropout on a tensor, returning the output.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
    let mut tape = Tape::new();
    let n = tape.constant(x.clone());
    let y = tape.dropout(n, rate, mode, rng)?;
    Ok(tape.value(y).clone())
}
