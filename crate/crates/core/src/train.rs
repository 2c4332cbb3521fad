//! Deterministic supervised training: softmax cross-entropy, SGD with
//! momentum, a piecewise-constant learning-rate schedule and metrics.
//!
//! Defaults that are not fixed by the training protocol (momentum 0.9, drops
//! at epochs 10 and 20, no weight decay) are assumptions and can be changed
//! through [`TrainConfig`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{cross_entropy, softmax};
use crate::model::{build_model, Batch, Grads, ModelConfig, Param, ParamKind, StGcn};
use crate::seed;
use crate::sequence::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_values: Vec<f64>,
    /// Epochs at which the rate drops to the next value.
    pub lr_boundaries: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr_values: vec![0.1, 0.01, 0.001],
            lr_boundaries: vec![10, 20],
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Default schedule stretched to `epochs`, dropping at one and two thirds
    /// (never before epoch 1).
    pub fn for_epochs(epochs: usize) -> Self {
        let first = (epochs / 3).max(1);
        TrainConfig {
            epochs,
            lr_boundaries: vec![first, (2 * epochs / 3).max(first + 1)],
            ..TrainConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.lr_values.len() != self.lr_boundaries.len() + 1 {
            return Err(Error::invalid(format!(
                "{} learning rates need {} boundaries, got {}",
                self.lr_values.len(),
                self.lr_values.len().saturating_sub(1),
                self.lr_boundaries.len()
            )));
        }
        if self.lr_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("learning rates must be strictly decreasing"));
        }
        if self.lr_values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        if self.lr_boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("learning-rate boundaries must be strictly increasing"));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based).
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let step = config.lr_boundaries.iter().filter(|&&b| epoch >= b).count();
    config.lr_values[step.min(config.lr_values.len() - 1)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1_accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    /// `NaN`-free: classes without samples report 0.
    pub per_class_accuracy: Vec<f64>,
    pub loss: f64,
}

impl Metrics {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize, loss: f64) -> Self {
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            confusion[y][p] += 1;
        }
        let total: usize = labels.len();
        let correct: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[k] as f64 / n as f64
                }
            })
            .collect();
        Metrics {
            top1_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            confusion,
            per_class_accuracy,
            loss,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Momentum SGD: `v ← μ v + g + λ θ`, `θ ← θ − lr v`, applied only to
/// trainable weights.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, params: &[Param]) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Param], grads: &Grads, lr: f64) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.kind != ParamKind::Weight || !p.trainable {
                continue;
            }
            for ((w, &gi), vi) in p.value.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Samples consumed this epoch.
    pub samples: usize,
    pub batches: usize,
    pub train_loss: f64,
    /// Running accuracy over this epoch's training batches.
    pub train_accuracy: f64,
    pub val: Option<Metrics>,
}

pub type History = Vec<EpochRecord>;

/// Splits `indices` into shuffled batches. A trailing singleton batch is
/// merged into the previous one so batch norm always sees two samples.
pub fn make_batches(mut indices: Vec<usize>, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    indices.sort_unstable();
    indices.shuffle(&mut seed::rng(seed, &format!("epoch{epoch}")));
    let mut batches: Vec<Vec<usize>> = indices.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    batches
}

/// Shared epoch loop. `subset(epoch)` picks the samples used in that epoch;
/// `step(batch, lr)` trains on one batch and returns `(loss_sum, correct)`.
pub(crate) fn run_epochs(
    config: &TrainConfig,
    mut subset: impl FnMut(usize) -> Vec<usize>,
    mut step: impl FnMut(&[usize], f64) -> Result<(f64, usize)>,
    mut validate: impl FnMut() -> Result<Option<Metrics>>,
) -> Result<History> {
    config.validate()?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let batches = make_batches(subset(epoch), config.batch_size, config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut samples = 0;
        for (b, batch) in batches.iter().enumerate() {
            let (l, c) = step(batch, lr).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch}, batch {b}: loss is {l}")));
            }
            loss_sum += l;
            correct += c;
            samples += batch.len();
        }
        history.push(EpochRecord {
            epoch,
            lr,
            samples,
            batches: batches.len(),
            train_loss: if samples == 0 { 0.0 } else { loss_sum / samples as f64 },
            train_accuracy: if samples == 0 { 0.0 } else { correct as f64 / samples as f64 },
            val: validate()?,
        });
    }
    Ok(history)
}

fn check_labels(data: &Dataset, num_classes: usize) -> Result<()> {
    if let Some(s) = data.samples.iter().find(|s| s.label >= num_classes) {
        return Err(Error::invalid(format!(
            "label {} out of range for a {num_classes}-class model",
            s.label
        )));
    }
    Ok(())
}

/// One optimisation step on `indices` of `data`. Returns `(loss_sum, correct)`.
pub fn train_step(
    model: &mut StGcn,
    optimizer: &mut Sgd,
    data: &Dataset,
    indices: &[usize],
    lr: f64,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(f64, usize)> {
    let batch = Batch::from_samples(indices.iter().map(|&i| &data.samples[i]))?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.samples[i].label).collect();
    let (logits, cache) = model.forward_train(&batch, Some(dropout_rng))?;
    let k = model.num_classes();
    let (loss, dlogits) = cross_entropy(&logits, &labels, k);
    let correct = logits
        .chunks_exact(k)
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let grads = model.backward(&cache, &dlogits, false);
    optimizer.step(model.params_mut(), &grads, lr);
    Ok((loss * indices.len() as f64, correct))
}

/// Trains `model` in place on `train`, evaluating on `val` after every epoch
/// (skipped when `val` is empty).
pub fn fit(model: &mut StGcn, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<History> {
    let all: Vec<usize> = (0..train.len()).collect();
    fit_subsets(model, train, val, config, |_| all.clone())
}

/// [`fit`] with a per-epoch sample subset.
pub fn fit_subsets(
    model: &mut StGcn,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    subset: impl FnMut(usize) -> Vec<usize>,
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    check_labels(train, model.num_classes())?;
    check_labels(val, model.num_classes())?;
    let mut optimizer = Sgd::new(config.momentum, config.weight_decay, model.params());
    let mut dropout_rng = seed::rng(config.seed, "dropout");
    let model_cell = std::cell::RefCell::new(model);
    run_epochs(
        config,
        subset,
        |batch, lr| {
            let mut m = model_cell.borrow_mut();
            train_step(&mut m, &mut optimizer, train, batch, lr, &mut dropout_rng)
        },
        || {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate(&model_cell.borrow(), val).map(Some)
            }
        },
    )
}

pub const EVAL_BATCH: usize = 32;

/// Evaluation-mode logits for every sample, `[N, K]`.
pub fn predict_logits(model: &StGcn, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len() * model.num_classes());
    for chunk in data.samples.chunks(EVAL_BATCH) {
        let batch = Batch::from_samples(chunk)?;
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

pub fn evaluate(model: &StGcn, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    check_labels(data, model.num_classes())?;
    let k = model.num_classes();
    let logits = predict_logits(model, data)?;
    let labels = data.labels();
    let (loss, _) = cross_entropy(&logits, &labels, k);
    let predictions: Vec<usize> = logits.chunks_exact(k).map(argmax).collect();
    Ok(Metrics::from_predictions(&predictions, &labels, k, loss))
}

/// Uniform-random class predictions: the chance baseline.
pub fn random_predictions(n: usize, num_classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed, "random-predictor");
    (0..n).map(|_| rng.random_range(0..num_classes)).collect()
}

/// Evaluation-mode probability of each sample's own label.
pub fn true_class_probabilities(model: &StGcn, data: &Dataset) -> Result<Vec<f64>> {
    let k = model.num_classes();
    let probs = softmax(&predict_logits(model, data)?, k);
    Ok(data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| probs[i * k + s.label])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Name of the scalar with the largest error.
    pub worst: String,
    pub checked: usize,
    /// Frozen scalars whose analytic gradient was computed but not checked
    /// or updated.
    pub frozen: usize,
    /// Steps shrunk because a ReLU changed state inside the interval.
    pub kink_retries: usize,
    pub all_finite: bool,
}

/// Relative error with an absolute floor: `|a − n| / max(|a|, |n|, floor)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
/// Central-difference step, relative to `max(1, |θ|)`.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Maximum number of tenfold step reductions around a ReLU kink.
pub const GRAD_CHECK_MAX_SHRINK: usize = 3;

/// Compares analytic gradients of the mean cross-entropy with central
/// differences on every trainable scalar of `model`.
pub fn gradient_check_model(model: &StGcn, batch: &Batch, labels: &[usize]) -> Result<GradCheckReport> {
    let k = model.num_classes();
    let mut scratch = model.clone();
    let (logits, cache) = scratch.forward_train(batch, None)?;
    let (_, dlogits) = cross_entropy(&logits, labels, k);
    let grads = model.backward(&cache, &dlogits, true);
    let all_finite = grads.iter().flatten().all(|g| g.is_finite());

    let eval_at = |m: &mut StGcn| -> Result<(f64, Vec<bool>)> {
        let (z, c) = m.forward_train(batch, None)?;
        Ok((cross_entropy(&z, labels, k).0, c.activation_pattern()))
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
        frozen: 0,
        kink_retries: 0,
        all_finite,
    };
    for (pi, p) in model.params().iter().enumerate() {
        if p.kind != ParamKind::Weight {
            continue;
        }
        if !p.trainable {
            report.frozen += p.value.len();
            continue;
        }
        for j in 0..p.value.len() {
            let theta = p.value[j];
            let mut h = GRAD_CHECK_STEP * theta.abs().max(1.0);
            let (mut up, mut down);
            let mut tries = 0;
            loop {
                scratch.params_mut()[pi].value[j] = theta + h;
                let (u, pu) = eval_at(&mut scratch)?;
                scratch.params_mut()[pi].value[j] = theta - h;
                let (d, pd) = eval_at(&mut scratch)?;
                up = u;
                down = d;
                if pu == pd || tries == GRAD_CHECK_MAX_SHRINK {
                    break;
                }
                // A ReLU switched inside the interval; the central difference
                // straddles a kink, so shrink the step.
                h /= 10.0;
                tries += 1;
                report.kink_retries += 1;
            }
            scratch.params_mut()[pi].value[j] = theta;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[pi][j];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = format!("{}[{j}]", p.name);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Gradient check on a freshly built model with a seeded random batch of two
/// samples.
pub fn gradient_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let model = build_model(config, seed)?;
    let mut rng = seed::rng(seed, "gradient-check");
    let (t, v) = (config.frames, config.num_joints());
    let n = 2;
    let data: Vec<f64> = (0..n * config.in_channels * t * v)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % config.num_classes).collect();
    let batch = Batch {
        data,
        dims: crate::model::layers::Dims::new(n, config.in_channels, t, v),
    };
    gradient_check_model(&model, &batch, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), 0.1);
        assert_eq!(lr_at(&c, 9), 0.1);
        assert_eq!(lr_at(&c, 10), 0.01);
        assert_eq!(lr_at(&c, 29), 0.001);
        assert!((1..30).all(|e| lr_at(&c, e) <= lr_at(&c, e - 1)));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.lr_boundaries = vec![10];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr_values = vec![0.1, 0.1, 0.01];
        assert!(c.validate().is_err());
        assert!(TrainConfig::for_epochs(200).validate().is_ok());
    }

    #[test]
    fn singleton_tail_is_merged() {
        let b = make_batches((0..9).collect(), 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = make_batches((0..10).collect(), 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batching_ignores_input_order() {
        let a = make_batches(vec![3, 1, 2, 0], 2, 5, 3);
        let b = make_batches(vec![0, 1, 2, 3], 2, 5, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_invariants() {
        let m = Metrics::from_predictions(&[0, 1, 1, 2], &[0, 1, 2, 2], 3, 0.0);
        assert_eq!(m.total(), 4);
        assert_eq!(m.top1_accuracy, 0.75);
        assert_eq!(m.per_class_accuracy, vec![1.0, 1.0, 0.5]);
        assert_eq!(m.confusion[2], vec![0, 1, 1]);
    }

    #[test]
    fn zero_lr_step_leaves_weights() {
        let mut params = vec![Param {
            name: "w".into(),
            shape: vec![2],
            value: vec![1.0, 2.0],
            trainable: true,
            kind: ParamKind::Weight,
        }];
        let mut sgd = Sgd::new(0.9, 0.0, &params);
        sgd.step(&mut params, &vec![vec![5.0, -5.0]], 0.0);
        assert_eq!(params[0].value, vec![1.0, 2.0]);
        sgd.step(&mut params, &vec![vec![1.0, 0.0]], 0.5);
        // v = 0.9 * 5 + 1 = 5.5
        assert_eq!(params[0].value, vec![1.0 - 2.75, 2.0 + 0.5 * 4.5]);
    }
}

