//! Dense feed-forward classifier: ReLU hidden layers, softmax output,
//! cross-entropy loss and plain mini-batch SGD. Everything runs in `f64`
//! with a fixed summation order, so training is bit-reproducible.

mod io;
mod train;

pub use io::{load_weights, save_weights, weights_from_bytes, weights_to_bytes, WEIGHT_FILE_VERSION};
pub use train::{mean_loss, train, EpochStats, TrainOutcome, TrainSpec, TrainingSet};

use rand::Rng;

use crate::channel::{derive_rng, Stream};
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking the log.
pub const LOG_EPSILON: f64 = 1e-12;

/// One fully connected layer. `weights` is `fan_in x fan_out`, row-major,
/// so the layer computes `z_out = W^T z_in + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.fan_out + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

impl DenseNetwork {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.fan_in == 0 || layer.fan_out == 0 {
                return Err(Error::invalid(format!("layer {l} has a zero dimension")));
            }
            if layer.weights.len() != layer.fan_in * layer.fan_out || layer.bias.len() != layer.fan_out {
                return Err(Error::invalid(format!("layer {l} buffers do not match its shape")));
            }
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::invalid(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].fan_out,
                    l + 1,
                    pair[1].fan_in
                )));
            }
        }
        Ok(DenseNetwork { layers })
    }

    /// All-zero network of the given layout.
    pub fn zeros(layout: &[usize]) -> Result<Self> {
        check_layout(layout)?;
        Self::from_layers(layout.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// `[delta_0, delta_1, ..., delta_L]`.
    pub fn layout(&self) -> Vec<usize> {
        std::iter::once(self.input_size())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Class probabilities for one input.
    pub fn forward(&self, z0: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z0)?;
        let mut scratch = Scratch::new(self);
        self.forward_into(z0, &mut scratch);
        Ok(scratch.acts.pop().expect("at least one layer"))
    }

    /// Index of the most probable class, ties to the lowest index.
    pub fn predict(&self, z0: &[f64], scratch: &mut Scratch) -> Result<usize> {
        self.check_input(z0)?;
        self.forward_into(z0, scratch);
        Ok(argmax(scratch.acts.last().expect("at least one layer")))
    }

    fn check_input(&self, z0: &[f64]) -> Result<()> {
        if z0.len() != self.input_size() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_size(),
                actual: z0.len(),
            });
        }
        Ok(())
    }

    fn forward_into(&self, z0: &[f64], scratch: &mut Scratch) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = scratch.acts.split_at_mut(l);
            let input = if l == 0 { z0 } else { &done[l - 1] };
            let out = &mut rest[0];
            out.copy_from_slice(&layer.bias);
            for (i, &x) in input.iter().enumerate() {
                if x != 0.0 {
                    let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += x * w;
                    }
                }
            }
            if l == last {
                softmax_in_place(out);
            } else {
                for o in out.iter_mut() {
                    *o = o.max(0.0);
                }
            }
        }
    }
}

/// Reusable activation buffers for one network layout.
#[derive(Debug, Clone)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    pub fn new(net: &DenseNetwork) -> Self {
        let widest = net.layout().into_iter().max().unwrap_or(0);
        Scratch {
            acts: net.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }
}

fn check_layout(layout: &[usize]) -> Result<()> {
    if layout.len() < 2 {
        return Err(Error::invalid(format!("layout needs at least 2 sizes, got {layout:?}")));
    }
    if layout.contains(&0) {
        return Err(Error::invalid(format!("layout sizes must be positive, got {layout:?}")));
    }
    Ok(())
}

/// Uniform fan-based initialization: weights in `±sqrt(6 / (fan_in + fan_out))`,
/// zero biases.
pub fn init_network(layout: &[usize], seed: u64) -> Result<DenseNetwork> {
    check_layout(layout)?;
    let layers = layout
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let half_width = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = derive_rng(seed, Stream::Init, &[l as u64]);
            let weights = (0..fan_in * fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * half_width)
                .collect();
            Layer {
                fan_in,
                fan_out,
                weights,
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    DenseNetwork::from_layers(layers)
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `-sum_n t_n log(max(p_n, eps))`.
pub fn cross_entropy(target: &[f64], probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(probs)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| -t * p.max(LOG_EPSILON).ln())
        .sum()
}

/// Gradients of the loss with respect to every weight and bias, laid out
/// like the network itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    /// Output-layer error `z_L - z_T` of the last accumulated sample.
    pub output_delta: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| Layer::zeros(l.fan_in, l.fan_out)).collect(),
            output_delta: vec![0.0; net.output_size()],
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

/// Exact single-sample gradients of cross-entropy over softmax outputs.
pub fn backprop_gradients(net: &DenseNetwork, z0: &[f64], target: &[f64]) -> Result<Gradients> {
    net.check_input(z0)?;
    if target.len() != net.output_size() {
        return Err(Error::DimensionMismatch {
            context: "target vector",
            expected: net.output_size(),
            actual: target.len(),
        });
    }
    let mut grads = Gradients::zeros_like(net);
    let mut scratch = Scratch::new(net);
    accumulate_gradients(net, z0, target, &mut scratch, &mut grads);
    Ok(grads)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adds one sample's gradients into `grads` and returns its loss.
pub(crate) fn accumulate_gradients(
    net: &DenseNetwork,
    z0: &[f64],
    target: &[f64],
    scratch: &mut Scratch,
    grads: &mut Gradients,
) -> f64 {
    net.forward_into(z0, scratch);
    let probs = scratch.acts.last().expect("at least one layer");
    let loss = cross_entropy(target, probs);

    scratch.delta.clear();
    scratch.delta.extend(probs.iter().zip(target).map(|(p, t)| p - t));
    grads.output_delta.copy_from_slice(&scratch.delta);

    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let input = if l == 0 { z0 } else { &scratch.acts[l - 1] };
        let g = &mut grads.layers[l];
        let delta = &scratch.delta;
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                let row = &mut g.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (gw, d) in row.iter_mut().zip(delta) {
                    *gw += x * d;
                }
            }
        }
        for (gb, d) in g.bias.iter_mut().zip(delta) {
            *gb += d;
        }
        if l > 0 {
            // ReLU derivative: 1 where the activation is positive, 0 otherwise.
            scratch.delta_prev.clear();
            scratch.delta_prev.extend(input.iter().enumerate().map(|(i, &a)| {
                if a > 0.0 {
                    dot(&layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out], delta)
                } else {
                    0.0
                }
            }));
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
        }
    }
    loss
}
