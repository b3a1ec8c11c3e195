//! Supervised classification datasets: synthetic generation and CSV I/O.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::param("dataset must not be empty"));
        }
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::param(format!("label {bad} outside [0, {num_classes})")));
        }
        features.ensure_finite("features")?;
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Features and labels of the given example indices.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.features.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Writes `f0,...,f{d-1},label` CSV with round-trip-exact reals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let d = self.dim();
        let header: Vec<String> = (0..d).map(|i| format!("f{i}")).chain(["label".to_string()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for (r, y) in self.labels.iter().enumerate() {
            let mut line = String::new();
            for v in self.features.row(r) {
                line.push_str(&format!("{v:e},"));
            }
            line.push_str(&y.to_string());
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parameters of the synthetic teacher task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub teacher_width: usize,
    pub label_noise: f64,
}

/// Minimum share of every class in the acceptance probe. Set above the 5%
/// floor required of generated data to absorb sampling noise.
const MIN_CLASS_SHARE: f64 = 0.07;
const MAX_TEACHER_TRIES: u64 = 64;
/// Large enough that the teacher's tanh units saturate and the boundary is
/// clearly nonlinear.
const TEACHER_INPUT_GAIN: f64 = 4.0;

struct Teacher {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    width: usize,
    dim: usize,
    classes: usize,
}

impl Teacher {
    fn sample(rng: &mut ChaCha8Rng, dim: usize, width: usize, classes: usize) -> Self {
        let a1 = (3.0 / dim as f64).sqrt() * TEACHER_INPUT_GAIN;
        let a2 = (3.0 / width as f64).sqrt() * 2.0;
        Self {
            w1: (0..width * dim).map(|_| rng.gen_range(-a1..a1)).collect(),
            b1: (0..width).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            w2: (0..classes * width).map(|_| rng.gen_range(-a2..a2)).collect(),
            width,
            dim,
            classes,
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = (0..self.width)
            .map(|j| {
                let s: f64 = (0..self.dim).map(|i| self.w1[j * self.dim + i] * x[i]).sum();
                (s + self.b1[j]).tanh()
            })
            .collect();
        (0..self.classes)
            .map(|k| (0..self.width).map(|j| self.w2[k * self.width + j] * hidden[j]).sum())
            .collect()
    }

    fn argmax(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }
}

/// Labels produced by the hidden teacher for each row, without noise.
///
/// Exposed so tests can check label agreement with the generator's teacher.
pub fn synthetic_teacher_labels(spec: &SyntheticSpec, features: &Tensor) -> Result<Vec<usize>> {
    let (teacher, _) = accepted_teacher(spec)?;
    Ok((0..features.rows()).map(|r| teacher.argmax(features.row(r))).collect())
}

fn accepted_teacher(spec: &SyntheticSpec) -> Result<(Teacher, ChaCha8Rng)> {
    for attempt in 0..MAX_TEACHER_TRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(attempt);
        let teacher = Teacher::sample(&mut rng, spec.dim, spec.teacher_width, spec.classes);
        // Balance probe on a separate stream so the data draw is unaffected.
        let mut probe = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        probe.set_stream(attempt);
        let m = 2000;
        let mut hist = vec![0usize; spec.classes];
        for _ in 0..m {
            let x: Vec<f64> = (0..spec.dim).map(|_| probe.gen_range(-1.0..1.0)).collect();
            hist[teacher.argmax(&x)] += 1;
        }
        if hist.iter().all(|&c| c as f64 >= MIN_CLASS_SHARE * m as f64) {
            return Ok((teacher, rng));
        }
    }
    Err(Error::param(format!(
        "no balanced teacher found for seed {} after {MAX_TEACHER_TRIES} attempts",
        spec.seed
    )))
}

/// Samples a random teacher MLP and labels uniform inputs with it.
///
/// Returns a 90/10 train/validation split. With probability `label_noise`
/// a label is replaced by a uniformly chosen different class.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.n < 10 || spec.dim == 0 || spec.classes < 2 || spec.teacher_width == 0 {
        return Err(Error::param(format!("invalid synthetic data parameters {spec:?}")));
    }
    if !(0.0..0.5).contains(&spec.label_noise) {
        return Err(Error::param(format!("label noise {} outside [0, 0.5)", spec.label_noise)));
    }
    let (teacher, mut rng) = accepted_teacher(spec)?;
    let mut features = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = teacher.argmax(&x);
        if rng.gen::<f64>() < spec.label_noise {
            let shift = rng.gen_range(1..spec.classes);
            y = (y + shift) % spec.classes;
        }
        features.extend(x);
        labels.push(y);
    }
    let n_train = spec.n * 9 / 10;
    let d = spec.dim;
    let train = Dataset::new(
        Tensor::matrix(n_train, d, features[..n_train * d].to_vec())?,
        labels[..n_train].to_vec(),
        spec.classes,
        Split::Train,
    )?;
    let val = Dataset::new(
        Tensor::matrix(spec.n - n_train, d, features[n_train * d..].to_vec())?,
        labels[n_train..].to_vec(),
        spec.classes,
        Split::Validation,
    )?;
    Ok((train, val))
}

/// Reads a `f0,...,f{d-1},label` CSV file.
///
/// With `num_classes = None` the class count is inferred as `max label + 1`.
pub fn load_csv(path: &Path, num_classes: Option<usize>, split: Split) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let d = header.len().checked_sub(1).ok_or_else(|| parse_err(1, "empty header".into()))?;
    let expected: Vec<String> = (0..d).map(|i| format!("f{i}")).chain(["label".to_string()]).collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, format!("header must be {}", expected.join(","))));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != d + 1 {
            return Err(parse_err(line, format!("expected {} cells, found {}", d + 1, record.len())));
        }
        for cell in record.iter().take(d) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell {cell:?}")));
            }
            features.push(v);
        }
        let cell = &record[d];
        let y: usize = cell
            .parse()
            .map_err(|_| parse_err(line, format!("invalid label {cell:?}")))?;
        if let Some(c) = num_classes {
            if y >= c {
                return Err(parse_err(line, format!("label {y} outside [0, {c})")));
            }
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    Dataset::new(Tensor::matrix(labels.len(), d, features)?, labels, classes, split)
}
