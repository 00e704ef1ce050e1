use rand::seq::SliceRandom;

use super::{accumulate_gradients, argmax, cross_entropy, DenseNetwork, Gradients, Scratch};
use crate::channel::{derive_rng, Stream};
use crate::error::{Error, Result};

/// Supervised classification data: feature rows and class labels.
///
/// Labels are stored as class indices; [`TrainingSet::one_hot`] expands a
/// row to its one-hot target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(dim: usize, classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::invalid("training set needs positive input size and class count"));
        }
        if inputs.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                context: "training inputs",
                expected: dim * labels.len(),
                actual: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(TrainingSet {
            dim,
            classes,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self, row: usize) -> &[f64] {
        &self.inputs[row * self.dim..(row + 1) * self.dim]
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn one_hot(&self, row: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.classes];
        t[self.labels[row]] = 1.0;
        t
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Splits off the last `fraction` of rows as a held-out set.
    pub fn split(&self, fraction: f64) -> (TrainingSet, TrainingSet) {
        let held = ((self.len() as f64) * fraction).floor() as usize;
        let cut = self.len() - held;
        let part = |lo: usize, hi: usize| TrainingSet {
            dim: self.dim,
            classes: self.classes,
            inputs: self.inputs[lo * self.dim..hi * self.dim].to_vec(),
            labels: self.labels[lo..hi].to_vec(),
        };
        (part(0, cut), part(cut, self.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the data held out for validation loss reporting.
    pub validation_fraction: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: 0.005,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            validation_fraction: 0.25,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        // η = 0 is allowed as a degenerate "frozen" run.
        if !(0.0..1.0).contains(&self.learning_rate) {
            return Err(Error::invalid(format!(
                "learning rate must lie in [0, 1), got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: DenseNetwork,
    pub history: Vec<EpochStats>,
}

fn evaluate(net: &DenseNetwork, data: &TrainingSet, scratch: &mut Scratch) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for row in 0..data.len() {
        net.forward_into(data.input(row), scratch);
        let probs = scratch.acts.last().expect("at least one layer");
        loss -= probs[data.label(row)].max(super::LOG_EPSILON).ln();
        if argmax(probs) == data.label(row) {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Mini-batch SGD, `W <- W - eta * mean_batch(dL/dW)` for every weight and
/// bias, for a fixed number of epochs. Rows are reshuffled each epoch from
/// the spec's seed.
pub fn train(mut net: DenseNetwork, data: &TrainingSet, spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if data.input_dim() != net.input_size() || data.classes() != net.output_size() {
        return Err(Error::invalid(format!(
            "data shape {}->{} does not match network {}->{}",
            data.input_dim(),
            data.classes(),
            net.input_size(),
            net.output_size()
        )));
    }
    let (train_part, val_part) = data.split(spec.validation_fraction);
    if train_part.is_empty() {
        return Err(Error::invalid("validation split leaves no training rows"));
    }

    let mut scratch = Scratch::new(&net);
    let mut grads = Gradients::zeros_like(&net);
    let mut target = vec![0.0; data.classes()];
    let mut order: Vec<usize> = (0..train_part.len()).collect();
    let mut history = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        let mut rng = derive_rng(spec.seed, Stream::Shuffle, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grads.clear();
            for &row in batch {
                let label = train_part.label(row);
                target[label] = 1.0;
                epoch_loss += accumulate_gradients(&net, train_part.input(row), &target, &mut scratch, &mut grads);
                target[label] = 0.0;
            }
            let step = spec.learning_rate / batch.len() as f64;
            for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= step * d;
                }
                for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= step * d;
                }
            }
        }
        let (val_loss, val_accuracy) = if val_part.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&net, &val_part, &mut scratch);
            (Some(l), Some(a))
        };
        history.push(EpochStats {
            epoch: epoch + 1,
            train_loss: epoch_loss / train_part.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    if !net.is_finite() {
        return Err(Error::invalid("training diverged: non-finite weights"));
    }
    Ok(TrainOutcome { network: net, history })
}

/// Mean cross-entropy of a network over a data set.
pub fn mean_loss(net: &DenseNetwork, data: &TrainingSet) -> f64 {
    let mut scratch = Scratch::new(net);
    let mut total = 0.0;
    for row in 0..data.len() {
        net.forward_into(data.input(row), &mut scratch);
        total += cross_entropy(&data.one_hot(row), scratch.acts.last().expect("layer"));
    }
    total / data.len() as f64
}
