//! Dense layers, softmax cross-entropy and the mini-batch SGD loop shared by
//! the per-view inducers and the late-fusion network.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer, `y = W x + b`, weights stored row-major
/// `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], biases: vec![0.0; out_dim] }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let biases = (0..out_dim).map(|_| draw()).collect();
        Dense { in_dim, out_dim, weights, biases }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|x| x.is_finite())
    }

    pub fn forward_into(&self, x: &[f64], y: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        y.clear();
        y.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.biases)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()),
        );
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.out_dim);
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseGrad) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.biases[o] += g;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    /// Same as [`Dense::backward`] without the input gradient.
    pub fn backward_params(&self, x: &[f64], dy: &[f64], grad: &mut DenseGrad) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.biases[o] += g;
            let grow = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, xi) in grow.iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }
}

/// Gradient buffers shaped like a [`Dense`] layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad { weights: vec![0.0; layer.weights.len()], biases: vec![0.0; layer.biases.len()] }
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|g| *g *= s);
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|g| *g = 0.0);
    }
}

pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradient entries whose activation was clipped by ReLU.
pub fn relu_backward_in_place(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// A network ending in a softmax head trained with cross-entropy. The
/// parameter order of [`Network::layers`] is canonical: gradients,
/// checkpoints and finite-difference checks all follow it.
pub trait Network: Clone {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn layers(&self) -> Vec<&Dense>;
    fn layers_mut(&mut self) -> Vec<&mut Dense>;
    fn logits(&self, input: &[f64]) -> Vec<f64>;
    /// Adds the gradient of the single-sample cross-entropy to `grads` and
    /// returns that loss.
    fn backprop(&self, input: &[f64], label: usize, grads: &mut [DenseGrad]) -> f64;

    fn probs(&self, input: &[f64]) -> Vec<f64> {
        softmax(&self.logits(input))
    }

    fn zero_grads(&self) -> Vec<DenseGrad> {
        self.layers().into_iter().map(DenseGrad::zeros_like).collect()
    }

    fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }
}

/// Mean cross-entropy over a batch.
pub fn mean_loss<N: Network>(net: &N, inputs: &[&[f64]], labels: &[usize]) -> f64 {
    let total: f64 = inputs.iter().zip(labels).map(|(x, &y)| cross_entropy(&net.logits(x), y)).sum();
    total / inputs.len() as f64
}

/// Mean cross-entropy and its exact gradient over a non-empty batch.
pub fn batch_gradient<N: Network>(net: &N, inputs: &[&[f64]], labels: &[usize]) -> Result<(f64, Vec<DenseGrad>)> {
    if inputs.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::input("inputs and labels differ in length"));
    }
    validate_batch(net, inputs, labels)?;
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        loss += net.backprop(x, y, &mut grads);
    }
    let scale = 1.0 / inputs.len() as f64;
    grads.iter_mut().for_each(|g| g.scale(scale));
    Ok((loss * scale, grads))
}

fn validate_batch<N: Network>(net: &N, inputs: &[&[f64]], labels: &[usize]) -> Result<()> {
    for x in inputs {
        if x.len() != net.input_dim() {
            return Err(Error::DimensionMismatch { expected: net.input_dim(), got: x.len() });
        }
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= net.num_classes()) {
        return Err(Error::input(format!("label {y} out of range for {} classes", net.num_classes())));
    }
    Ok(())
}

pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error between analytic gradients and central finite
/// differences over every parameter, with denominator
/// `max(|a|, |b|, 1e-8)`.
pub fn gradient_check<N: Network>(net: &N, inputs: &[&[f64]], labels: &[usize]) -> Result<f64> {
    let (_, analytic) = batch_gradient(net, inputs, labels)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (li, grad) in analytic.iter().enumerate() {
        for (is_bias, n) in [(false, grad.weights.len()), (true, grad.biases.len())] {
            for k in 0..n {
                let original = *param_mut(&mut probe, li, is_bias, k);
                *param_mut(&mut probe, li, is_bias, k) = original + FD_STEP;
                let plus = mean_loss(&probe, inputs, labels);
                *param_mut(&mut probe, li, is_bias, k) = original - FD_STEP;
                let minus = mean_loss(&probe, inputs, labels);
                *param_mut(&mut probe, li, is_bias, k) = original;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let a = if is_bias { grad.biases[k] } else { grad.weights[k] };
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}

fn param_mut<N: Network>(net: &mut N, layer: usize, is_bias: bool, k: usize) -> &mut f64 {
    let layer = net.layers_mut().swap_remove(layer);
    if is_bias {
        &mut layer.biases[k]
    } else {
        &mut layer.weights[k]
    }
}

/// Optimizer and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Fraction of the training split held out to drive early stopping.
    pub early_stop_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: 40,
            early_stop_patience: 5,
            early_stop_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::input("batch_size and max_epochs must be positive"));
        }
        if !(self.early_stop_fraction > 0.0 && self.early_stop_fraction < 0.5) {
            return Err(Error::input("early_stop_fraction must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// One row of a training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_holdout_loss: f64,
}

/// Applies `param -= lr * grad` to every layer.
pub fn sgd_step<N: Network>(net: &mut N, grads: &[DenseGrad], lr: f64) {
    for (layer, g) in net.layers_mut().into_iter().zip(grads) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= lr * gw;
        }
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= lr * gb;
        }
    }
}

/// Runs one pass of mini-batch SGD over `order`.
pub fn run_epoch<N: Network>(
    net: &mut N,
    inputs: &[&[f64]],
    labels: &[usize],
    order: &[usize],
    config: &TrainConfig,
    grads: &mut [DenseGrad],
) -> f64 {
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        grads.iter_mut().for_each(DenseGrad::clear);
        for &i in batch {
            total += net.backprop(inputs[i], labels[i], grads);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| g.scale(scale));
        sgd_step(net, grads, config.learning_rate);
    }
    total / order.len().max(1) as f64
}

/// Mini-batch SGD with early stopping on a held-out slice of the training
/// data. Returns the parameters with the lowest holdout loss.
pub fn train_network<N: Network>(
    mut net: N,
    inputs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(N, TrainLog)> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::input("no training data"));
    }
    validate_batch(&net, inputs, labels)?;

    let mut indices: Vec<usize> = (0..inputs.len()).collect();
    indices.shuffle(rng);
    let n_hold = if inputs.len() < 2 {
        0
    } else {
        ((inputs.len() as f64 * config.early_stop_fraction).round() as usize).clamp(1, inputs.len() - 1)
    };
    let (hold_idx, train_idx) = indices.split_at(n_hold);
    let hold_idx = if hold_idx.is_empty() { train_idx } else { hold_idx };
    let hold_inputs: Vec<&[f64]> = hold_idx.iter().map(|&i| inputs[i]).collect();
    let hold_labels: Vec<usize> = hold_idx.iter().map(|&i| labels[i]).collect();
    let mut order = train_idx.to_vec();

    let mut grads = net.zero_grads();
    let mut best = net.clone();
    let mut log =
        TrainLog { epochs: Vec::new(), best_epoch: 0, best_holdout_loss: mean_loss(&net, &hold_inputs, &hold_labels) };
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(rng);
        let train_loss = run_epoch(&mut net, inputs, labels, &order, config, &mut grads);
        let holdout_loss = mean_loss(&net, &hold_inputs, &hold_labels);
        log.epochs.push(EpochRecord { epoch, train_loss, holdout_loss });
        if !net.is_finite() {
            break;
        }
        if holdout_loss < log.best_holdout_loss {
            log.best_holdout_loss = holdout_loss;
            log.best_epoch = epoch;
            best = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok((best, log))
}
