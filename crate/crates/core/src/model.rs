//! Softmax regression and one-hidden-layer ReLU networks over flat parameter
//! vectors.
//!
//! Layout, layer by layer in forward order: the weight matrix row-major with
//! shape `inputs × outputs` (entry `(i, o)` at `i * outputs + o`), then the
//! bias vector. Softmax regression has a single layer.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;

const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    /// Zero selects softmax regression.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelArch {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dim,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::InvalidArch("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArch("num_classes must be at least 2".into()));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of each dense layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        if self.hidden_dim == 0 {
            vec![(self.input_dim, self.num_classes)]
        } else {
            vec![
                (self.input_dim, self.hidden_dim),
                (self.hidden_dim, self.num_classes),
            ]
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Flat model parameters tied to the architecture they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    arch: ModelArch,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(arch: ModelArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: ModelArch) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn arch(&self) -> ModelArch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn from_parts_unchecked(arch: ModelArch, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), arch.param_count());
        Self { arch, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 || self.local_epochs < 1 {
            return Err(Error::InvalidArgument(
                "batch_size and local_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Weights uniform in `[-0.05, 0.05]`, biases zero.
pub fn init_params(arch: ModelArch, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let mut rng = rng_from(seed);
    let mut values = Vec::with_capacity(arch.param_count());
    for (inputs, outputs) in arch.layers() {
        values.extend((0..inputs * outputs).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)));
        values.extend(std::iter::repeat_n(0.0, outputs));
    }
    Ok(ParamVector::from_parts_unchecked(arch, values))
}

fn check_data(arch: ModelArch, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.input_dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            actual: data.input_dim(),
        });
    }
    if data.num_classes() > arch.num_classes {
        return Err(Error::DimensionMismatch {
            expected: arch.num_classes,
            actual: data.num_classes(),
        });
    }
    Ok(())
}

/// Per-sample scratch space for forward and backward passes.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    grad_hidden: Vec<f64>,
}

impl Workspace {
    fn new(arch: ModelArch) -> Self {
        Self {
            hidden: vec![0.0; arch.hidden_dim],
            logits: vec![0.0; arch.num_classes],
            grad_hidden: vec![0.0; arch.hidden_dim],
        }
    }
}

/// `out = b + x · W` for a row-major `inputs × outputs` weight block.
fn dense(x: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    out.copy_from_slice(bias);
    let outputs = out.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &weights[i * outputs..(i + 1) * outputs];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
}

/// Replaces logits with softmax probabilities, returning `-ln p[label]`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = logits[label] - max;
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
    total.ln() - shifted_label
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct Forward<'a> {
    arch: ModelArch,
    params: &'a [f64],
}

impl<'a> Forward<'a> {
    fn new(params: &'a ParamVector) -> Self {
        Self {
            arch: params.arch,
            params: &params.values,
        }
    }

    /// Fills `ws.logits` (and `ws.hidden` for the MLP).
    fn run(&self, x: &[f64], ws: &mut Workspace) {
        let a = self.arch;
        if a.hidden_dim == 0 {
            let (w, b) = self.params.split_at(a.input_dim * a.num_classes);
            dense(x, w, b, &mut ws.logits);
        } else {
            let w1_len = a.input_dim * a.hidden_dim;
            let (w1, rest) = self.params.split_at(w1_len);
            let (b1, rest) = rest.split_at(a.hidden_dim);
            let (w2, b2) = rest.split_at(a.hidden_dim * a.num_classes);
            dense(x, w1, b1, &mut ws.hidden);
            for h in ws.hidden.iter_mut() {
                *h = h.max(0.0);
            }
            dense(&ws.hidden, w2, b2, &mut ws.logits);
        }
    }
}

/// Mean loss over `rows`, writing the mean gradient into `grad`.
fn loss_grad_rows(
    params: &ParamVector,
    data: &LabeledDataset,
    rows: &[usize],
    grad: &mut [f64],
    ws: &mut Workspace,
) -> f64 {
    let a = params.arch;
    let forward = Forward::new(params);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for &r in rows {
        let (x, y) = data.sample(r);
        forward.run(x, ws);
        loss += softmax_xent(&mut ws.logits, y);
        // logits now hold probabilities; turn them into dL/dz.
        ws.logits[y] -= 1.0;
        let grad_logits = &ws.logits;
        if a.hidden_dim == 0 {
            let (gw, gb) = grad.split_at_mut(a.input_dim * a.num_classes);
            accumulate_dense(x, grad_logits, gw, gb);
        } else {
            let w1_len = a.input_dim * a.hidden_dim;
            let (gw1, rest) = grad.split_at_mut(w1_len);
            let (gb1, rest) = rest.split_at_mut(a.hidden_dim);
            let (gw2, gb2) = rest.split_at_mut(a.hidden_dim * a.num_classes);
            accumulate_dense(&ws.hidden, grad_logits, gw2, gb2);

            let w2 = &params.values[w1_len + a.hidden_dim..w1_len + a.hidden_dim + gw2.len()];
            for (h, gh) in ws.grad_hidden.iter_mut().enumerate() {
                if ws.hidden[h] > 0.0 {
                    let row = &w2[h * a.num_classes..(h + 1) * a.num_classes];
                    *gh = row.iter().zip(grad_logits).map(|(w, g)| w * g).sum();
                } else {
                    *gh = 0.0;
                }
            }
            accumulate_dense(x, &ws.grad_hidden, gw1, gb1);
        }
    }
    let scale = 1.0 / rows.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    loss * scale
}

fn accumulate_dense(x: &[f64], grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    let outputs = grad_out.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut gw[i * outputs..(i + 1) * outputs];
        for (g, &d) in row.iter_mut().zip(grad_out) {
            *g += xi * d;
        }
    }
    for (g, &d) in gb.iter_mut().zip(grad_out) {
        *g += d;
    }
}

/// Mean cross-entropy over the whole batch and its gradient.
pub fn forward_loss_grad(params: &ParamVector, batch: &LabeledDataset) -> Result<(f64, ParamVector)> {
    check_data(params.arch, batch)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut ws = Workspace::new(params.arch);
    let loss = loss_grad_rows(params, batch, &rows, &mut grad, &mut ws);
    Ok((loss, ParamVector::from_parts_unchecked(params.arch, grad)))
}

/// Runs `local_epochs` epochs of shuffled mini-batch SGD with momentum from
/// a fresh velocity buffer.
pub fn local_train(
    global: &ParamVector,
    data: &LabeledDataset,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<ParamVector> {
    cfg.validate()?;
    check_data(global.arch, data)?;
    let mut model = global.clone();
    let mut velocity = vec![0.0; model.len()];
    let mut grad = vec![0.0; model.len()];
    let mut ws = Workspace::new(model.arch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng_from(seed);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            loss_grad_rows(&model, data, rows, &mut grad, &mut ws);
            for ((w, v), g) in model.values.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.learning_rate * *v;
            }
        }
    }
    if model.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(model)
}

/// Number of samples evaluated for a given fraction: `⌈fraction · n⌉`.
pub fn eval_count(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs representation error such as 0.1 · 1000.
    let count = (fraction * n as f64 - 1e-9).ceil() as usize;
    count.clamp(1, n)
}

/// Accuracy and mean cross-entropy over all rows.
pub fn evaluate_all(params: &ParamVector, data: &LabeledDataset) -> Result<(f64, f64)> {
    check_data(params.arch, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    Ok(evaluate_rows(params, data, &rows))
}

fn evaluate_rows(params: &ParamVector, data: &LabeledDataset, rows: &[usize]) -> (f64, f64) {
    let forward = Forward::new(params);
    let mut ws = Workspace::new(params.arch);
    let mut correct = 0usize;
    let mut loss = 0.0;
    for &r in rows {
        let (x, y) = data.sample(r);
        forward.run(x, &mut ws);
        if argmax(&ws.logits) == y {
            correct += 1;
        }
        loss += softmax_xent(&mut ws.logits, y);
    }
    let n = rows.len() as f64;
    (correct as f64 / n, loss / n)
}

/// Accuracy and mean loss on a seeded random subset of `⌈fraction · |data|⌉`
/// samples. Returns the number of samples evaluated as well.
pub fn evaluate_counted(
    params: &ParamVector,
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(f64, f64, usize)> {
    check_data(params.arch, data)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "evaluation fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let count = eval_count(data.len(), fraction);
    let rows: Vec<usize> = if count == data.len() {
        (0..data.len()).collect()
    } else {
        let mut rng = rng_from(seed);
        let mut rows = index::sample(&mut rng, data.len(), count).into_vec();
        rows.sort_unstable();
        rows
    };
    let (acc, loss) = evaluate_rows(params, data, &rows);
    Ok((acc, loss, count))
}

pub fn evaluate(
    params: &ParamVector,
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    evaluate_counted(params, data, fraction, seed).map(|(acc, loss, _)| (acc, loss))
}
