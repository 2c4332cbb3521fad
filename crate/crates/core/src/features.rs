//! Feature-extraction transfer: intermediate activations of a frozen
//! backbone, multi-layer fusion, PCA / truncated SVD and three downstream
//! classifiers.
//!
//! Flattened maps are laid out channel-major, then time, then joint.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{cross_entropy, dense_backward, dense_forward, relu, relu_backward, softmax};
use crate::model::{Batch, Param, ParamKind, StGcn};
use crate::seed;
use crate::sequence::Dataset;
use crate::train::{argmax, run_epochs, Metrics, Sgd, TrainConfig, EVAL_BATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Gap,
    Flatten,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(Pooling::Gap),
            "flatten" => Ok(Pooling::Flatten),
            other => Err(Error::invalid(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    Pca,
    TruncatedSvd,
}

impl FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ReductionMethod::Pca),
            "truncated_svd" | "svd" => Ok(ReductionMethod::TruncatedSvd),
            other => Err(Error::invalid(format!("unknown reduction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Source blocks (1-based); `[0]` marks raw input coordinates.
    pub layers: Vec<usize>,
    pub pooling: Pooling,
    pub reduction: Option<(ReductionMethod, usize)>,
}

/// `N` feature vectors of width `D`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub vectors: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl FeatureSet {
    pub fn new(vectors: Vec<f64>, d: usize, labels: Vec<usize>, num_classes: usize, provenance: Provenance) -> Result<Self> {
        let n = labels.len();
        if vectors.len() != n * d {
            return Err(Error::shape(format!("{} values do not form {n} rows of width {d}", vectors.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(FeatureSet {
            vectors,
            n,
            d,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            vectors: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            n: indices.len(),
            d: self.d,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        }
    }
}

/// Evaluation-mode activations of block `layer`, pooled or flattened.
pub fn extract(model: &StGcn, data: &Dataset, layer: usize, pooling: Pooling) -> Result<FeatureSet> {
    let mut vectors = Vec::new();
    let mut d_out = 0;
    for chunk in data.samples.chunks(EVAL_BATCH) {
        let batch = Batch::from_samples(chunk)?;
        let (x, d) = model.feature_map(&batch, layer)?;
        match pooling {
            Pooling::Gap => {
                let per = d.t * d.v;
                vectors.extend(x.chunks_exact(per).map(|c| c.iter().sum::<f64>() / per as f64));
                d_out = d.c;
            }
            Pooling::Flatten => {
                vectors.extend_from_slice(&x);
                d_out = d.c * d.t * d.v;
            }
        }
    }
    if data.is_empty() {
        d_out = match pooling {
            Pooling::Gap => model.config().channels()[layer.clamp(1, 10) - 1],
            Pooling::Flatten => 0,
        };
    }
    FeatureSet::new(
        vectors,
        d_out,
        data.labels(),
        data.num_classes(),
        Provenance {
            layers: vec![layer],
            pooling,
            reduction: None,
        },
    )
}

/// Per-(axis, joint) time average of the raw coordinates, `D = 3V`.
pub fn coordinate_features(data: &Dataset) -> Result<FeatureSet> {
    let mut vectors = Vec::new();
    let mut d = 0;
    for s in &data.samples {
        let t = s.frames().max(1);
        d = 3 * s.joints();
        for c in 0..3 {
            for v in 0..s.joints() {
                vectors.push((0..s.frames()).map(|f| s.get(c, f, v)).sum::<f64>() / t as f64);
            }
        }
    }
    FeatureSet::new(
        vectors,
        d,
        data.labels(),
        data.num_classes(),
        Provenance {
            layers: vec![0],
            pooling: Pooling::Gap,
            reduction: None,
        },
    )
}

/// Concatenates GAP features of two or three consecutive blocks.
pub fn fuse(sets: &[FeatureSet]) -> Result<FeatureSet> {
    if !(2..=3).contains(&sets.len()) {
        return Err(Error::invalid(format!("fusion takes 2 or 3 feature sets, got {}", sets.len())));
    }
    let first = &sets[0];
    let mut layers = Vec::new();
    for s in sets {
        if s.provenance.pooling != Pooling::Gap || s.provenance.reduction.is_some() {
            return Err(Error::invalid("fusion needs unreduced GAP features"));
        }
        if s.n != first.n || s.labels != first.labels {
            return Err(Error::invalid("fused feature sets must describe the same samples"));
        }
        layers.extend(&s.provenance.layers);
    }
    if layers.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::invalid(format!("fused layers must be consecutive, got {layers:?}")));
    }
    let d: usize = sets.iter().map(|s| s.d).sum();
    let mut vectors = Vec::with_capacity(first.n * d);
    for i in 0..first.n {
        for s in sets {
            vectors.extend_from_slice(s.row(i));
        }
    }
    FeatureSet::new(
        vectors,
        d,
        first.labels.clone(),
        first.num_classes,
        Provenance {
            layers,
            pooling: Pooling::Gap,
            reduction: None,
        },
    )
}

/// A fitted linear projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub method: ReductionMethod,
    /// Subtracted before projecting (zeros for truncated SVD).
    pub mean: Vec<f64>,
    /// `[dims, D]`, one unit direction per row.
    pub components: Vec<f64>,
    pub dims: usize,
    /// Variance along each component (PCA) or squared singular value over
    /// `N − 1` (truncated SVD); non-increasing.
    pub explained_variance: Vec<f64>,
}

impl Reduction {
    pub fn fit(set: &FeatureSet, method: ReductionMethod, dims: usize) -> Result<Reduction> {
        let (n, d) = (set.n, set.d);
        if dims == 0 || dims > n.min(d) {
            return Err(Error::invalid(format!(
                "cannot keep {dims} dimensions of {n} samples × {d} features"
            )));
        }
        let mean: Vec<f64> = match method {
            ReductionMethod::Pca => (0..d)
                .map(|j| (0..n).map(|i| set.vectors[i * d + j]).sum::<f64>() / n as f64)
                .collect(),
            ReductionMethod::TruncatedSvd => vec![0.0; d],
        };
        let x = DMatrix::from_fn(n, d, |i, j| set.vectors[i * d + j] - mean[j]);
        let svd = x.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::NonFinite("SVD did not return right singular vectors".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(dims * d);
        let mut explained_variance = Vec::with_capacity(dims);
        for &k in order.iter().take(dims) {
            let mut row: Vec<f64> = v_t.row(k).iter().copied().collect();
            // Deterministic sign: largest-magnitude entry positive.
            let pivot = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map_or(0, |(i, _)| i);
            if row[pivot] < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
            }
            components.extend(row);
            let s = svd.singular_values[k];
            explained_variance.push(s * s / (n.max(2) - 1) as f64);
        }
        Ok(Reduction {
            method,
            mean,
            components,
            dims,
            explained_variance,
        })
    }

    pub fn transform(&self, set: &FeatureSet) -> Result<FeatureSet> {
        let d = self.mean.len();
        if set.d != d {
            return Err(Error::shape(format!("reduction fitted on D={d}, set has D={}", set.d)));
        }
        let mut out = Vec::with_capacity(set.n * self.dims);
        let mut centred = vec![0.0; d];
        for i in 0..set.n {
            for (j, c) in centred.iter_mut().enumerate() {
                *c = set.vectors[i * d + j] - self.mean[j];
            }
            for k in 0..self.dims {
                let comp = &self.components[k * d..(k + 1) * d];
                out.push(comp.iter().zip(&centred).map(|(a, b)| a * b).sum());
            }
        }
        let mut provenance = set.provenance.clone();
        provenance.reduction = Some((self.method, self.dims));
        FeatureSet::new(out, self.dims, set.labels.clone(), set.num_classes, provenance)
    }
}

/// Fits a projection on `set` and applies it to `set`.
pub fn reduce(set: &FeatureSet, method: ReductionMethod, dims: usize) -> Result<FeatureSet> {
    Reduction::fit(set, method, dims)?.transform(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    SvmLinear,
    LogregMultinomial,
    Ffnn,
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm_linear" | "svm" => Ok(ClassifierKind::SvmLinear),
            "logreg_multinomial" | "logreg" => Ok(ClassifierKind::LogregMultinomial),
            "ffnn" => Ok(ClassifierKind::Ffnn),
            other => Err(Error::invalid(format!("unknown classifier `{other}`"))),
        }
    }
}

pub const MAX_ITERATIONS: usize = 5000;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    /// Weight `C` of the data term against `½‖W‖²`.
    pub reg_constant: f64,
    /// Hidden widths of the FFNN (0 to 3); the output layer is implicit.
    pub ffnn_hidden: Vec<usize>,
    pub ffnn_epochs: usize,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        ClassifierSpec {
            kind,
            reg_constant: 1.0,
            ffnn_hidden: Vec::new(),
            ffnn_epochs: 60,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg_constant > 0.0) {
            return Err(Error::invalid("reg_constant must be positive"));
        }
        if self.ffnn_hidden.len() > 3 || self.ffnn_hidden.contains(&0) {
            return Err(Error::invalid("ffnn has 1 to 4 dense layers of positive width"));
        }
        if self.kind == ClassifierKind::Ffnn && self.ffnn_epochs == 0 {
            return Err(Error::invalid("ffnn_epochs must be positive"));
        }
        Ok(())
    }
}

/// Per-feature z-scoring fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(set: &FeatureSet) -> Self {
        let (n, d) = (set.n.max(1) as f64, set.d);
        let mut mean = vec![0.0; d];
        for i in 0..set.n {
            for (m, x) in mean.iter_mut().zip(set.row(i)) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..set.n {
            for ((v, x), m) in var.iter_mut().zip(set.row(i)).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale = var.iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, set: &FeatureSet) -> Vec<f64> {
        let d = self.mean.len();
        set.vectors
            .iter()
            .enumerate()
            .map(|(k, x)| (x - self.mean[k % d]) / self.scale[k % d])
            .collect()
    }
}

/// Linear scores `x Wᵀ + b` with `W` as `[K, D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub k: usize,
    pub d: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    fn scores(&self, x: &[f64], n: usize) -> Vec<f64> {
        dense_forward(x, n, self.d, &self.weight, &self.bias, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierModel {
    Linear(LinearModel),
    Ffnn(Vec<Param>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    pub standardizer: Standardizer,
    pub model: ClassifierModel,
    /// Objective after every accepted iteration; one log per one-vs-rest
    /// problem for the SVM, a single log otherwise (per-epoch mean loss for
    /// the FFNN).
    pub objective_log: Vec<Vec<f64>>,
}

fn ffnn_forward(params: &[Param], x: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let layers = params.len() / 2;
    let mut acts = vec![x.to_vec()];
    let mut h = x.to_vec();
    for l in 0..layers {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        h = dense_forward(&h, n, w.shape[1], &w.value, &b.value, w.shape[0]);
        if l + 1 < layers {
            relu(&mut h);
            acts.push(h.clone());
        }
    }
    (h, acts)
}

impl TrainedClassifier {
    pub fn scores(&self, set: &FeatureSet) -> Result<Vec<f64>> {
        if set.d != self.standardizer.mean.len() {
            return Err(Error::shape(format!(
                "classifier expects D={}, got {}",
                self.standardizer.mean.len(),
                set.d
            )));
        }
        let x = self.standardizer.apply(set);
        Ok(match &self.model {
            ClassifierModel::Linear(m) => m.scores(&x, set.n),
            ClassifierModel::Ffnn(params) => ffnn_forward(params, &x, set.n).0,
        })
    }

    pub fn num_classes(&self) -> usize {
        match &self.model {
            ClassifierModel::Linear(m) => m.k,
            ClassifierModel::Ffnn(p) => p.last().map_or(0, |b| b.value.len()),
        }
    }

    pub fn predict(&self, set: &FeatureSet) -> Result<Vec<usize>> {
        let k = self.num_classes();
        Ok(self.scores(set)?.chunks_exact(k).map(argmax).collect())
    }

    pub fn evaluate(&self, set: &FeatureSet) -> Result<Metrics> {
        let k = self.num_classes();
        let scores = self.scores(set)?;
        let loss = if set.n == 0 { 0.0 } else { cross_entropy(&scores, &set.labels, k).0 };
        let predictions: Vec<usize> = scores.chunks_exact(k).map(argmax).collect();
        Ok(Metrics::from_predictions(&predictions, &set.labels, k, loss))
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `½‖w‖² + C Σ max(0, 1 − yᵢ(w·xᵢ + b))` for one binary problem.
fn hinge_objective(x: &[f64], y: &[f64], d: usize, c: f64, w: &[f64], b: f64) -> f64 {
    let loss: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| {
            let m = yi * (w.iter().zip(&x[i * d..(i + 1) * d]).map(|(a, v)| a * v).sum::<f64>() + b);
            (1.0 - m).max(0.0)
        })
        .sum();
    0.5 * sq_norm(w) + c * loss
}

/// Sub-gradient descent with backtracking: a step is only taken when the
/// objective does not increase, so the log is monotone.
fn train_hinge(x: &[f64], y: &[f64], d: usize, c: f64) -> (Vec<f64>, f64, Vec<f64>) {
    let n = y.len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut obj = hinge_objective(x, y, d, c, &w, b);
    let mut log = vec![obj];
    let mut eta = 1.0 / (c * n as f64).max(1.0);
    for _ in 0..MAX_ITERATIONS {
        let mut gw = w.clone();
        let mut gb = 0.0;
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let m = y[i] * (w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>() + b);
            if m < 1.0 {
                for (g, v) in gw.iter_mut().zip(row) {
                    *g -= c * y[i] * v;
                }
                gb -= c * y[i];
            }
        }
        if sq_norm(&gw) + gb * gb == 0.0 {
            break;
        }
        let mut accepted = None;
        while eta > 1e-14 {
            let cw: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - eta * g).collect();
            let cb = b - eta * gb;
            let cand = hinge_objective(x, y, d, c, &cw, cb);
            if cand <= obj {
                accepted = Some((cw, cb, cand));
                break;
            }
            eta *= 0.5;
        }
        let Some((cw, cb, cand)) = accepted else { break };
        let decrease = obj - cand;
        w = cw;
        b = cb;
        obj = cand;
        log.push(obj);
        eta *= 1.5;
        if decrease < OBJECTIVE_TOLERANCE * obj.abs().max(1.0) {
            break;
        }
    }
    (w, b, log)
}

/// `½‖W‖² + C Σ CE(softmax(Wxᵢ + b), yᵢ)` and its gradient.
fn softmax_objective(x: &[f64], labels: &[usize], d: usize, k: usize, c: f64, m: &LinearModel) -> (f64, Vec<f64>, Vec<f64>) {
    let n = labels.len();
    let scores = m.scores(x, n);
    let (mean_ce, dscores) = cross_entropy(&scores, labels, k);
    // cross_entropy averages over N; the objective sums.
    let dscores: Vec<f64> = dscores.iter().map(|g| g * c * n as f64).collect();
    let mut gw = m.weight.clone();
    let mut gb = vec![0.0; k];
    dense_backward(&dscores, x, n, d, &m.weight, k, &mut gw, &mut gb);
    (0.5 * sq_norm(&m.weight) + c * mean_ce * n as f64, gw, gb)
}

/// Gradient descent with Armijo backtracking.
fn train_softmax(x: &[f64], labels: &[usize], d: usize, k: usize, c: f64) -> (LinearModel, Vec<f64>) {
    let mut m = LinearModel {
        k,
        d,
        weight: vec![0.0; k * d],
        bias: vec![0.0; k],
    };
    let (mut obj, mut gw, mut gb) = softmax_objective(x, labels, d, k, c, &m);
    let mut log = vec![obj];
    let mut eta = 1.0 / (c * labels.len() as f64).max(1.0);
    for _ in 0..MAX_ITERATIONS {
        let g2 = sq_norm(&gw) + sq_norm(&gb);
        if g2 == 0.0 {
            break;
        }
        let mut accepted = None;
        while eta > 1e-14 {
            let cand = LinearModel {
                weight: m.weight.iter().zip(&gw).map(|(a, g)| a - eta * g).collect(),
                bias: m.bias.iter().zip(&gb).map(|(a, g)| a - eta * g).collect(),
                ..m.clone()
            };
            let (cobj, cgw, cgb) = softmax_objective(x, labels, d, k, c, &cand);
            if cobj <= obj - 1e-4 * eta * g2 {
                accepted = Some((cand, cobj, cgw, cgb));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, cobj, cgw, cgb)) = accepted else { break };
        let decrease = obj - cobj;
        m = cand;
        obj = cobj;
        gw = cgw;
        gb = cgb;
        log.push(obj);
        eta *= 2.0;
        if decrease < OBJECTIVE_TOLERANCE * obj.abs().max(1.0) {
            break;
        }
    }
    (m, log)
}

fn train_ffnn(x: &[f64], labels: &[usize], d: usize, k: usize, spec: &ClassifierSpec) -> Result<(Vec<Param>, Vec<f64>)> {
    let widths: Vec<usize> = spec.ffnn_hidden.iter().copied().chain([k]).collect();
    let mut rng = seed::rng(spec.seed, "ffnn");
    let mut params = Vec::new();
    let mut d_in = d;
    for (l, &d_out) in widths.iter().enumerate() {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut w = Param::new(format!("fc{l}.weight"), vec![d_out, d_in], ParamKind::Weight);
        let mut b = Param::new(format!("fc{l}.bias"), vec![d_out], ParamKind::Weight);
        w.value.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        b.value.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        params.push(w);
        params.push(b);
        d_in = d_out;
    }
    let mut config = TrainConfig::for_epochs(spec.ffnn_epochs).with_seed(seed::derive(spec.seed, "ffnn-batches"));
    config.batch_size = 16;
    config.weight_decay = 1.0 / (spec.reg_constant * labels.len() as f64);
    let mut opt = Sgd::new(config.momentum, config.weight_decay, &params);
    let all: Vec<usize> = (0..labels.len()).collect();
    let history = run_epochs(
        &config,
        |_| all.clone(),
        |batch, lr| {
            let n = batch.len();
            let xb: Vec<f64> = batch.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect();
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, acts) = ffnn_forward(&params, &xb, n);
            let (loss, mut dy) = cross_entropy(&logits, &yb, k);
            let correct = logits.chunks_exact(k).zip(&yb).filter(|(r, &y)| argmax(r) == y).count();
            let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            for l in (0..params.len() / 2).rev() {
                let w = &params[2 * l];
                let (gw, rest) = grads[2 * l..].split_at_mut(1);
                let dx = dense_backward(&dy, &acts[l], n, w.shape[1], &w.value, w.shape[0], &mut gw[0], &mut rest[0]);
                if l > 0 {
                    dy = dx;
                    relu_backward(&mut dy, &acts[l]);
                }
            }
            opt.step(&mut params, &grads, lr);
            Ok((loss * n as f64, correct))
        },
        || Ok(None),
    )?;
    let log = history.iter().map(|r| r.train_loss).collect();
    Ok((params, log))
}

/// Trains `spec` on `train` and reports metrics on `val`.
pub fn train_classifier(train: &FeatureSet, val: &FeatureSet, spec: &ClassifierSpec) -> Result<(TrainedClassifier, Metrics)> {
    spec.validate()?;
    if train.d != val.d {
        return Err(Error::shape(format!("train D={} but val D={}", train.d, val.d)));
    }
    let mut present = train.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::invalid("training set needs at least two classes"));
    }
    let k = train.num_classes.max(val.num_classes);
    let standardizer = Standardizer::fit(train);
    let x = standardizer.apply(train);
    let d = train.d;
    let c = spec.reg_constant;
    let (model, objective_log) = match spec.kind {
        ClassifierKind::SvmLinear => {
            let mut weight = vec![0.0; k * d];
            let mut bias = vec![0.0; k];
            let mut logs = Vec::with_capacity(k);
            for class in 0..k {
                let y: Vec<f64> = train.labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
                let (w, b, log) = train_hinge(&x, &y, d, c);
                weight[class * d..(class + 1) * d].copy_from_slice(&w);
                bias[class] = b;
                logs.push(log);
            }
            (ClassifierModel::Linear(LinearModel { k, d, weight, bias }), logs)
        }
        ClassifierKind::LogregMultinomial => {
            let (m, log) = train_softmax(&x, &train.labels, d, k, c);
            (ClassifierModel::Linear(m), vec![log])
        }
        ClassifierKind::Ffnn => {
            let (params, log) = train_ffnn(&x, &train.labels, d, k, spec)?;
            (ClassifierModel::Ffnn(params), vec![log])
        }
    };
    let trained = TrainedClassifier {
        spec: spec.clone(),
        standardizer,
        model,
        objective_log,
    };
    let metrics = trained.evaluate(val)?;
    Ok((trained, metrics))
}

pub const FEATURE_MAGIC: &[u8; 4] = b"STGF";
pub const FEATURE_VERSION: u32 = 1;

/// Binary feature file, little-endian:
///
/// ```text
/// magic "STGF", version u32 = 1
/// N u32, D u32, K u32
/// provenance   u32 length + JSON {"layers", "pooling", "reduction"}
/// labels       u32 × N
/// vectors      f32 × N·D, row-major
/// ```
pub fn write_features(set: &FeatureSet, mut w: impl Write) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    for v in [set.n, set.d, set.num_classes] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    let prov = serde_json::to_vec(&set.provenance)?;
    w.write_u32::<LittleEndian>(prov.len() as u32)?;
    w.write_all(&prov)?;
    for &y in &set.labels {
        w.write_u32::<LittleEndian>(y as u32)?;
    }
    for &x in &set.vectors {
        w.write_f32::<LittleEndian>(x as f32)?;
    }
    Ok(())
}

pub fn read_features(mut r: impl Read) -> Result<FeatureSet> {
    let bad = |e: std::io::Error| Error::Format(format!("truncated feature file: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format("not a feature file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(bad)?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let n = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let k = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let len = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let mut prov = vec![0u8; len];
    r.read_exact(&mut prov).map_err(bad)?;
    let provenance: Provenance = serde_json::from_slice(&prov)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.read_u32::<LittleEndian>().map_err(bad)? as usize);
    }
    let mut raw = vec![0f32; n * d];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(bad)?;
    FeatureSet::new(raw.into_iter().map(f64::from).collect(), d, labels, k, provenance)
}

pub fn save_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_features(set, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    read_features(std::fs::read(path)?.as_slice())
}

/// `label,f0,…,f{D−1}` with 32-bit values.
pub fn features_csv(set: &FeatureSet) -> String {
    let mut out = String::from("label");
    for j in 0..set.d {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..set.n {
        out.push_str(&set.labels[i].to_string());
        for x in set.row(i) {
            out.push_str(&format!(",{}", *x as f32));
        }
        out.push('\n');
    }
    out
}

/// Class probabilities from classifier scores (used for reporting).
pub fn score_probabilities(scores: &[f64], k: usize) -> Vec<f64> {
    softmax(scores, k)
}
