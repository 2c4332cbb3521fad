//! The ST-GCN backbone: ten spatial-temporal blocks, global average pooling
//! and a dense classifier head.
//!
//! Every block is `graph conv → BN → ReLU → temporal conv (9x1) → BN`, added
//! to a residual branch and passed through ReLU. The residual is absent in
//! block 1, the identity when the shape is unchanged and a strided 1x1
//! convolution followed by BN otherwise. The input is normalised by a
//! per-(channel, joint) batch norm that is grouped with block 1 when layers
//! are frozen or re-initialised.
//!
//! The adjacency is the equal-weight partitioned graph from
//! [`crate::topology::build_adjacency`]; it is fixed at build time and never
//! trained. There is no dropout in the backbone.
//!
//! All arithmetic is `f64`. Parameters live in one flat, named store so
//! freezing, checkpointing and gradient checks can enumerate them.

pub mod checkpoint;
pub mod layers;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sequence::SkeletonSequence;
use crate::topology::{build_adjacency, PartitionStrategy, PartitionedAdjacency, SkeletonTopology};
use layers::{BnCache, BnLayout, BnParams, Dims, GraphConvCache, SparseAdjacency, BN_MOMENTUM};

pub const NUM_BLOCKS: usize = 10;
pub const BASE_CHANNELS: [usize; NUM_BLOCKS] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const BASE_STRIDES: [usize; NUM_BLOCKS] = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];
pub const DEFAULT_TEMPORAL_KERNEL: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Multiplier applied to every entry of `base_channels`.
    pub width_ratio: f64,
    pub num_classes: usize,
    pub in_channels: usize,
    pub topology: SkeletonTopology,
    pub frames: usize,
    pub base_channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub temporal_kernel: usize,
    pub strategy: PartitionStrategy,
}

impl ModelConfig {
    /// The original ST-GCN layout at width ratio 1.
    pub fn new(topology: SkeletonTopology, num_classes: usize, frames: usize) -> Self {
        ModelConfig {
            width_ratio: 1.0,
            num_classes,
            in_channels: 3,
            topology,
            frames,
            base_channels: BASE_CHANNELS.to_vec(),
            strides: BASE_STRIDES.to_vec(),
            temporal_kernel: DEFAULT_TEMPORAL_KERNEL,
            strategy: PartitionStrategy::Spatial,
        }
    }

    /// Every block at 256 channels, the alternative reading of the
    /// architecture description.
    pub fn flat_256(mut self) -> Self {
        self.base_channels = vec![256; NUM_BLOCKS];
        self
    }

    pub fn num_joints(&self) -> usize {
        self.topology.num_joints()
    }

    /// Effective channels per block: `max(1, round(R · base))`.
    pub fn channels(&self) -> Vec<usize> {
        self.base_channels
            .iter()
            .map(|&b| ((self.width_ratio * b as f64).round() as usize).max(1))
            .collect()
    }

    /// Frame count after each block.
    pub fn frames_after(&self) -> Vec<usize> {
        let mut t = self.frames;
        self.strides
            .iter()
            .map(|&s| {
                t = layers::temporal_out_len(t, s);
                t
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_ratio > 0.0) || !self.width_ratio.is_finite() {
            return Err(Error::invalid(format!("width ratio must be positive, got {}", self.width_ratio)));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::invalid("temporal kernel must be odd"));
        }
        if self.base_channels.len() != NUM_BLOCKS || self.strides.len() != NUM_BLOCKS {
            return Err(Error::invalid(format!("expected {NUM_BLOCKS} blocks")));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(Error::invalid("strides must be positive"));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.frames == 0 {
            return Err(Error::invalid("classes, input channels and frames must be positive"));
        }
        self.topology.validate()
    }
}

/// Returns `config` with its width ratio set to `ratio`.
pub fn scale_width(config: &ModelConfig, ratio: f64) -> Result<ModelConfig> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!("width ratio must be positive, got {ratio}")));
    }
    Ok(ModelConfig {
        width_ratio: ratio,
        ..config.clone()
    })
}

/// Dense classifier head on top of the pooled backbone features.
///
/// `hidden` lists the widths of the hidden dense layers (0 to 3 of them), so
/// the head has `hidden.len() + 1` dense layers. Dropout is applied after each
/// hidden layer during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl HeadSpec {
    pub fn linear(seed: u64) -> Self {
        HeadSpec {
            hidden: Vec::new(),
            dropout: 0.0,
            seed,
        }
    }

    pub fn dense_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() > 3 {
            return Err(Error::invalid("a head has at most 4 dense layers"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    RunningStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub trainable: bool,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(name: String, shape: Vec<usize>, kind: ParamKind) -> Self {
        let len = shape.iter().product();
        Param {
            name,
            shape,
            value: vec![0.0; len],
            trainable: kind == ParamKind::Weight,
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
enum Residual {
    None,
    Identity,
    Projection { weight: usize, bias: usize, bn: BnIds },
}

#[derive(Debug, Clone)]
struct Block {
    c_in: usize,
    c_out: usize,
    stride: usize,
    gcn_w: usize,
    gcn_b: usize,
    bn1: BnIds,
    tcn_w: usize,
    tcn_b: usize,
    bn2: BnIds,
    residual: Residual,
}

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    weight: usize,
    bias: usize,
    d_in: usize,
    d_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A batch laid out as `[N, C, T, V]` (the single body axis is implicit).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub data: Vec<f64>,
    pub dims: Dims,
}

impl Batch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a SkeletonSequence>) -> Result<Self> {
        let mut data = Vec::new();
        let mut shape: Option<(usize, usize)> = None;
        let mut n = 0;
        for s in samples {
            match shape {
                None => shape = Some((s.frames(), s.joints())),
                Some(sh) if sh != (s.frames(), s.joints()) => {
                    return Err(Error::shape(format!(
                        "batch mixes {}x{} and {}x{} sequences",
                        sh.0,
                        sh.1,
                        s.frames(),
                        s.joints()
                    )))
                }
                _ => {}
            }
            data.extend_from_slice(s.coords());
            n += 1;
        }
        let (t, v) = shape.ok_or_else(|| Error::Empty("empty batch".into()))?;
        Ok(Batch {
            data,
            dims: Dims::new(n, 3, t, v),
        })
    }
}

/// Per-parameter gradients, aligned with [`StGcn::params`]. Running
/// statistics have empty entries.
pub type Grads = Vec<Vec<f64>>;

struct BlockCache {
    input: Vec<f64>,
    in_dims: Dims,
    gcn: GraphConvCache,
    bn1: BnCache,
    act1: Vec<f64>,
    bn2: BnCache,
    res_bn: Option<BnCache>,
    output: Vec<f64>,
}

/// Activations kept by [`StGcn::forward_train`] for the backward pass.
pub struct ForwardCache {
    dims: Dims,
    data_bn: BnCache,
    blocks: Vec<BlockCache>,
    last_dims: Dims,
    head_inputs: Vec<Vec<f64>>,
    head_hidden: Vec<Vec<f64>>,
    dropout_masks: Vec<Option<Vec<f64>>>,
}

impl ForwardCache {
    /// Which ReLU outputs are active, in a fixed order. Two passes with equal
    /// patterns lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.act1.iter().map(|&x| x > 0.0));
            out.extend(b.output.iter().map(|&x| x > 0.0));
        }
        for h in &self.head_hidden {
            out.extend(h.iter().map(|&x| x > 0.0));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StGcn {
    config: ModelConfig,
    head_spec: HeadSpec,
    adjacency: PartitionedAdjacency,
    sparse: SparseAdjacency,
    params: Vec<Param>,
    data_bn: BnIds,
    blocks: Vec<Block>,
    head: Vec<DenseIds>,
}

/// Builds a freshly initialised model. Block `ℓ` draws from the stream
/// `seed::derive(seed, "block{ℓ}")` and the head from `HeadSpec::linear(seed)`,
/// so re-initialising a block with the same seed reproduces it exactly.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<StGcn> {
    StGcn::new(config.clone(), HeadSpec::linear(seed), seed)
}

impl StGcn {
    pub fn new(config: ModelConfig, head_spec: HeadSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        head_spec.validate()?;
        let adjacency = build_adjacency(&config.topology, config.strategy)?;
        let sparse = SparseAdjacency::new(&adjacency);
        let mut model = StGcn {
            head_spec: head_spec.clone(),
            adjacency,
            sparse,
            params: Vec::new(),
            data_bn: BnIds {
                gamma: 0,
                beta: 0,
                mean: 0,
                var: 0,
            },
            blocks: Vec::new(),
            head: Vec::new(),
            config,
        };
        let v = model.config.num_joints();
        model.data_bn = model.push_bn("data_bn", model.config.in_channels * v);
        let channels = model.config.channels();
        let parts = model.adjacency.num_partitions();
        let kernel = model.config.temporal_kernel;
        let mut c_in = model.config.in_channels;
        for (i, (&c_out, &stride)) in channels.iter().zip(&model.config.strides.clone()).enumerate() {
            let prefix = format!("block{}", i + 1);
            let gcn_w = model.push(format!("{prefix}.gcn.weight"), vec![parts, c_out, c_in]);
            let gcn_b = model.push(format!("{prefix}.gcn.bias"), vec![parts, c_out]);
            let bn1 = model.push_bn(&format!("{prefix}.bn1"), c_out);
            let tcn_w = model.push(format!("{prefix}.tcn.weight"), vec![c_out, c_out, kernel]);
            let tcn_b = model.push(format!("{prefix}.tcn.bias"), vec![c_out]);
            let bn2 = model.push_bn(&format!("{prefix}.bn2"), c_out);
            let residual = if i == 0 {
                Residual::None
            } else if c_in == c_out && stride == 1 {
                Residual::Identity
            } else {
                let weight = model.push(format!("{prefix}.residual.weight"), vec![c_out, c_in]);
                let bias = model.push(format!("{prefix}.residual.bias"), vec![c_out]);
                let bn = model.push_bn(&format!("{prefix}.residual_bn"), c_out);
                Residual::Projection { weight, bias, bn }
            };
            model.blocks.push(Block {
                c_in,
                c_out,
                stride,
                gcn_w,
                gcn_b,
                bn1,
                tcn_w,
                tcn_b,
                bn2,
                residual,
            });
            c_in = c_out;
        }
        model.reset_data_bn();
        for layer in 1..=NUM_BLOCKS {
            model.init_block(layer, seed);
        }
        model.rebuild_head(model.config.num_classes, head_spec)?;
        Ok(model)
    }

    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.params.push(Param::new(name, shape, ParamKind::Weight));
        self.params.len() - 1
    }

    fn push_bn(&mut self, prefix: &str, channels: usize) -> BnIds {
        let gamma = self.push(format!("{prefix}.gamma"), vec![channels]);
        let beta = self.push(format!("{prefix}.beta"), vec![channels]);
        self.params.push(Param::new(
            format!("{prefix}.running_mean"),
            vec![channels],
            ParamKind::RunningStat,
        ));
        let mean = self.params.len() - 1;
        self.params.push(Param::new(
            format!("{prefix}.running_var"),
            vec![channels],
            ParamKind::RunningStat,
        ));
        BnIds {
            gamma,
            beta,
            mean,
            var: self.params.len() - 1,
        }
    }

    fn reset_bn(&mut self, bn: BnIds) {
        self.params[bn.gamma].value.iter_mut().for_each(|x| *x = 1.0);
        self.params[bn.beta].value.iter_mut().for_each(|x| *x = 0.0);
        self.params[bn.mean].value.iter_mut().for_each(|x| *x = 0.0);
        self.params[bn.var].value.iter_mut().for_each(|x| *x = 1.0);
    }

    fn reset_data_bn(&mut self) {
        self.reset_bn(self.data_bn);
    }

    fn fill_uniform(&mut self, id: usize, bound: f64, rng: &mut ChaCha8Rng) {
        for x in self.params[id].value.iter_mut() {
            *x = rng.random_range(-bound..bound);
        }
    }

    /// Redraws block `layer` (1-based) from `seed::derive(seed, "block{layer}")`.
    /// Block 1 also resets the input batch norm.
    pub(crate) fn init_block(&mut self, layer: usize, seed: u64) {
        let block = self.blocks[layer - 1].clone();
        let mut rng = seed::rng(seed, &format!("block{layer}"));
        let kernel = self.config.temporal_kernel;
        let gcn_bound = 1.0 / (block.c_in as f64).sqrt();
        self.fill_uniform(block.gcn_w, gcn_bound, &mut rng);
        self.fill_uniform(block.gcn_b, gcn_bound, &mut rng);
        let tcn_bound = 1.0 / ((block.c_out * kernel) as f64).sqrt();
        self.fill_uniform(block.tcn_w, tcn_bound, &mut rng);
        self.fill_uniform(block.tcn_b, tcn_bound, &mut rng);
        self.reset_bn(block.bn1);
        self.reset_bn(block.bn2);
        if let Residual::Projection { weight, bias, bn } = block.residual {
            let bound = 1.0 / (block.c_in as f64).sqrt();
            self.fill_uniform(weight, bound, &mut rng);
            self.fill_uniform(bias, bound, &mut rng);
            self.reset_bn(bn);
        }
        if layer == 1 {
            self.reset_data_bn();
        }
    }

    /// Drops the current head and builds a new one for `num_classes`
    /// outputs, initialised from `seed::derive(spec.seed, "head")`.
    pub fn rebuild_head(&mut self, num_classes: usize, spec: HeadSpec) -> Result<()> {
        spec.validate()?;
        if num_classes == 0 {
            return Err(Error::invalid("head needs at least one class"));
        }
        if let Some(first) = self.head.first() {
            self.params.truncate(first.weight);
        }
        self.head.clear();
        let mut d_in = *self.config.channels().last().unwrap_or(&1);
        let widths: Vec<usize> = spec.hidden.iter().copied().chain([num_classes]).collect();
        for (l, &d_out) in widths.iter().enumerate() {
            let weight = self.push(format!("head.fc{l}.weight"), vec![d_out, d_in]);
            let bias = self.push(format!("head.fc{l}.bias"), vec![d_out]);
            self.head.push(DenseIds {
                weight,
                bias,
                d_in,
                d_out,
            });
            d_in = d_out;
        }
        let mut rng = seed::rng(spec.seed, "head");
        for dense in self.head.clone() {
            let bound = 1.0 / (dense.d_in as f64).sqrt();
            self.fill_uniform(dense.weight, bound, &mut rng);
            self.fill_uniform(dense.bias, bound, &mut rng);
        }
        self.config.num_classes = num_classes;
        self.head_spec = spec;
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head_spec(&self) -> &HeadSpec {
        &self.head_spec
    }

    pub fn adjacency(&self) -> &PartitionedAdjacency {
        &self.adjacency
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.len())
            .sum()
    }

    /// Indices into [`params`](Self::params) owned by block `layer`
    /// (1-based); block 1 includes the input batch norm.
    pub fn block_param_ids(&self, layer: usize) -> Vec<usize> {
        let prefix = format!("block{layer}.");
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(&prefix) || (layer == 1 && p.name.starts_with("data_bn.")))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn head_param_ids(&self) -> Vec<usize> {
        match self.head.first() {
            Some(first) => (first.weight..self.params.len()).collect(),
            None => Vec::new(),
        }
    }

    /// Marks every learnable parameter of block `layer` as trainable or not.
    pub fn set_block_trainable(&mut self, layer: usize, trainable: bool) {
        for id in self.block_param_ids(layer) {
            if self.params[id].kind == ParamKind::Weight {
                self.params[id].trainable = trainable;
            }
        }
    }

    pub fn set_head_trainable(&mut self, trainable: bool) {
        for id in self.head_param_ids() {
            self.params[id].trainable = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            if p.kind == ParamKind::Weight {
                p.trainable = trainable;
            }
        }
    }

    pub fn block_trainable(&self, layer: usize) -> bool {
        self.params[self.blocks[layer - 1].gcn_w].trainable
    }

    fn check_input(&self, dims: Dims) -> Result<()> {
        if dims.c != self.config.in_channels || dims.v != self.config.num_joints() {
            return Err(Error::shape(format!(
                "model expects {} channels and {} joints, batch has {} and {}",
                self.config.in_channels,
                self.config.num_joints(),
                dims.c,
                dims.v
            )));
        }
        if dims.n == 0 || dims.t == 0 {
            return Err(Error::Empty("batch has no samples or frames".into()));
        }
        Ok(())
    }

    fn bn_params(&self, bn: BnIds) -> BnParams<'_> {
        BnParams {
            gamma: &self.params[bn.gamma].value,
            beta: &self.params[bn.beta].value,
            running_mean: &self.params[bn.mean].value,
            running_var: &self.params[bn.var].value,
        }
    }

    /// Batch statistics are used only when training and the layer's affine
    /// parameters are trainable; frozen layers behave as in evaluation.
    fn bn_apply(
        &mut self,
        x: &[f64],
        d: Dims,
        layout: BnLayout,
        bn: BnIds,
        mode: Mode,
    ) -> (Vec<f64>, BnCache) {
        let batch_stats = mode == Mode::Train && self.params[bn.gamma].trainable;
        let (y, cache, stats) = layers::batch_norm_forward(x, d, layout, &self.bn_params(bn), batch_stats);
        if let Some((mean, var)) = stats {
            for (r, m) in self.params[bn.mean].value.iter_mut().zip(&mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in self.params[bn.var].value.iter_mut().zip(&var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
        (y, cache)
    }

    fn bn_eval(&self, x: &[f64], d: Dims, layout: BnLayout, bn: BnIds) -> Vec<f64> {
        layers::batch_norm_forward(x, d, layout, &self.bn_params(bn), false).0
    }

    fn block_forward_eval(&self, b: &Block, x: &[f64], d: Dims) -> (Vec<f64>, Dims) {
        let (g, _) = layers::graph_conv_forward(
            x,
            d,
            &self.sparse,
            &self.params[b.gcn_w].value,
            Some(&self.params[b.gcn_b].value),
            b.c_out,
        );
        let gd = d.with_c(b.c_out);
        let mut a = self.bn_eval(&g, gd, BnLayout::Channel, b.bn1);
        layers::relu(&mut a);
        let h = layers::temporal_conv_forward(
            &a,
            gd,
            &self.params[b.tcn_w].value,
            &self.params[b.tcn_b].value,
            b.c_out,
            self.config.temporal_kernel,
            b.stride,
        );
        let od = gd.with_t(layers::temporal_out_len(d.t, b.stride));
        let mut out = self.bn_eval(&h, od, BnLayout::Channel, b.bn2);
        match b.residual {
            Residual::None => {}
            Residual::Identity => out.iter_mut().zip(x).for_each(|(o, r)| *o += r),
            Residual::Projection { weight, bias, bn } => {
                let r = layers::pointwise_forward(
                    x,
                    d,
                    &self.params[weight].value,
                    &self.params[bias].value,
                    b.c_out,
                    b.stride,
                );
                let r = self.bn_eval(&r, od, BnLayout::Channel, bn);
                out.iter_mut().zip(&r).for_each(|(o, r)| *o += r);
            }
        }
        layers::relu(&mut out);
        (out, od)
    }

    fn block_forward_train(&mut self, layer: usize, x: Vec<f64>, d: Dims) -> BlockCache {
        let b = self.blocks[layer].clone();
        let (g, gcn) = layers::graph_conv_forward(
            &x,
            d,
            &self.sparse,
            &self.params[b.gcn_w].value,
            Some(&self.params[b.gcn_b].value),
            b.c_out,
        );
        let gd = d.with_c(b.c_out);
        let (mut act1, bn1) = self.bn_apply(&g, gd, BnLayout::Channel, b.bn1, Mode::Train);
        layers::relu(&mut act1);
        let h = layers::temporal_conv_forward(
            &act1,
            gd,
            &self.params[b.tcn_w].value,
            &self.params[b.tcn_b].value,
            b.c_out,
            self.config.temporal_kernel,
            b.stride,
        );
        let od = gd.with_t(layers::temporal_out_len(d.t, b.stride));
        let (mut out, bn2) = self.bn_apply(&h, od, BnLayout::Channel, b.bn2, Mode::Train);
        let mut res_bn = None;
        match b.residual {
            Residual::None => {}
            Residual::Identity => out.iter_mut().zip(&x).for_each(|(o, r)| *o += r),
            Residual::Projection { weight, bias, bn } => {
                let r = layers::pointwise_forward(
                    &x,
                    d,
                    &self.params[weight].value,
                    &self.params[bias].value,
                    b.c_out,
                    b.stride,
                );
                let (r, cache) = self.bn_apply(&r, od, BnLayout::Channel, bn, Mode::Train);
                out.iter_mut().zip(&r).for_each(|(o, r)| *o += r);
                res_bn = Some(cache);
            }
        }
        layers::relu(&mut out);
        BlockCache {
            input: x,
            in_dims: d,
            gcn,
            bn1,
            act1,
            bn2,
            res_bn,
            output: out,
        }
    }

    fn check_finite(values: &[f64], what: &str) -> Result<()> {
        if values.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} produced a non-finite value")))
        }
    }

    /// Evaluation-mode activations after block `layer` (1-based).
    pub fn feature_map(&self, batch: &Batch, layer: usize) -> Result<(Vec<f64>, Dims)> {
        if layer == 0 || layer > NUM_BLOCKS {
            return Err(Error::invalid(format!("layer must be in 1..={NUM_BLOCKS}, got {layer}")));
        }
        self.check_input(batch.dims)?;
        let mut d = batch.dims;
        let mut x = self.bn_eval(&batch.data, d, BnLayout::ChannelJoint, self.data_bn);
        for (i, b) in self.blocks.iter().take(layer).enumerate() {
            let (y, nd) = self.block_forward_eval(b, &x, d);
            Self::check_finite(&y, &format!("block {}", i + 1))?;
            x = y;
            d = nd;
        }
        Ok((x, d))
    }

    fn head_forward_eval(&self, pooled: Vec<f64>, n: usize) -> Vec<f64> {
        let mut h = pooled;
        for (l, dense) in self.head.iter().enumerate() {
            h = layers::dense_forward(
                &h,
                n,
                dense.d_in,
                &self.params[dense.weight].value,
                &self.params[dense.bias].value,
                dense.d_out,
            );
            if l + 1 < self.head.len() {
                layers::relu(&mut h);
            }
        }
        h
    }

    /// Evaluation-mode logits `[N, num_classes]`.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let (x, d) = self.feature_map(batch, NUM_BLOCKS)?;
        let pooled = layers::global_average_pool(&x, d);
        let logits = self.head_forward_eval(pooled, d.n);
        Self::check_finite(&logits, "classifier head")?;
        Ok(logits)
    }

    /// Logits in either mode. Training mode updates batch-norm running
    /// statistics of trainable layers; use [`forward_train`](Self::forward_train)
    /// when gradients are needed.
    pub fn forward(&mut self, batch: &Batch, mode: Mode) -> Result<Vec<f64>> {
        match mode {
            Mode::Eval => self.predict(batch),
            Mode::Train => Ok(self.forward_train(batch, None)?.0),
        }
    }

    /// Training-mode forward pass. `dropout_rng` drives head dropout; `None`
    /// disables it.
    pub fn forward_train(
        &mut self,
        batch: &Batch,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(batch.dims)?;
        let dims = batch.dims;
        let (x0, data_bn) = self.bn_apply(&batch.data, dims, BnLayout::ChannelJoint, self.data_bn, Mode::Train);
        let mut x = x0;
        let mut d = dims;
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for layer in 0..NUM_BLOCKS {
            let cache = self.block_forward_train(layer, x, d);
            Self::check_finite(&cache.output, &format!("block {}", layer + 1))?;
            d = d.with_c(self.blocks[layer].c_out).with_t(layers::temporal_out_len(d.t, self.blocks[layer].stride));
            x = cache.output.clone();
            blocks.push(cache);
        }
        let last_dims = d;
        let mut h = layers::global_average_pool(&x, d);
        let n = d.n;
        let mut head_inputs = Vec::new();
        let mut head_hidden = Vec::new();
        let mut dropout_masks = Vec::new();
        let p = self.head_spec.dropout;
        for (l, dense) in self.head.iter().enumerate() {
            let z = layers::dense_forward(
                &h,
                n,
                dense.d_in,
                &self.params[dense.weight].value,
                &self.params[dense.bias].value,
                dense.d_out,
            );
            head_inputs.push(std::mem::replace(&mut h, z));
            if l + 1 < self.head.len() {
                layers::relu(&mut h);
                head_hidden.push(h.clone());
                let mask = match dropout_rng.as_deref_mut() {
                    Some(rng) if p > 0.0 => {
                        let keep = 1.0 / (1.0 - p);
                        let m: Vec<f64> = (0..h.len())
                            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                            .collect();
                        h.iter_mut().zip(&m).for_each(|(a, b)| *a *= b);
                        Some(m)
                    }
                    _ => None,
                };
                dropout_masks.push(mask);
            }
        }
        Self::check_finite(&h, "classifier head")?;
        Ok((
            h,
            ForwardCache {
                dims,
                data_bn,
                blocks,
                last_dims,
                head_inputs,
                head_hidden,
                dropout_masks,
            },
        ))
    }

    /// Lowest block whose parameters (or any below-lying ones) need
    /// gradients. Gradients are not propagated below it.
    fn lowest_trainable_block(&self) -> Option<usize> {
        (1..=NUM_BLOCKS).find(|&l| {
            self.block_param_ids(l)
                .iter()
                .any(|&i| self.params[i].kind == ParamKind::Weight && self.params[i].trainable)
        })
    }

    /// Backward pass from `dlogits`. With `all` set, gradients are produced
    /// for frozen parameters too; otherwise propagation stops below the
    /// lowest trainable block.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], all: bool) -> Grads {
        let mut grads: Grads = self
            .params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Weight => vec![0.0; p.value.len()],
                ParamKind::RunningStat => Vec::new(),
            })
            .collect();
        let n = cache.last_dims.n;

        // Head.
        let mut g = dlogits.to_vec();
        for l in (0..self.head.len()).rev() {
            let dense = self.head[l];
            let (dw, db) = two_mut(&mut grads, dense.weight, dense.bias);
            g = layers::dense_backward(
                &g,
                &cache.head_inputs[l],
                n,
                dense.d_in,
                &self.params[dense.weight].value,
                dense.d_out,
                dw,
                db,
            );
            if l > 0 {
                if let Some(mask) = &cache.dropout_masks[l - 1] {
                    g.iter_mut().zip(mask).for_each(|(a, b)| *a *= b);
                }
                layers::relu_backward(&mut g, &cache.head_hidden[l - 1]);
            }
        }

        let stop = if all { Some(1) } else { self.lowest_trainable_block() };
        let Some(stop) = stop else {
            return grads;
        };
        let mut dy = layers::global_average_pool_backward(&g, cache.last_dims);
        for layer in (stop..=NUM_BLOCKS).rev() {
            let b = &self.blocks[layer - 1];
            let bc = &cache.blocks[layer - 1];
            let d = bc.in_dims;
            let gd = d.with_c(b.c_out);
            let od = gd.with_t(layers::temporal_out_len(d.t, b.stride));
            layers::relu_backward(&mut dy, &bc.output);
            let mut dx = vec![0.0; d.len()];
            match b.residual {
                Residual::None => {}
                Residual::Identity => dx.iter_mut().zip(&dy).for_each(|(a, b)| *a += b),
                Residual::Projection { weight, bias, bn } => {
                    let res_cache = bc.res_bn.as_ref().expect("projection cache");
                    let (dg, dbt) = two_mut(&mut grads, bn.gamma, bn.beta);
                    let dr = layers::batch_norm_backward(
                        &dy,
                        od,
                        BnLayout::Channel,
                        &self.params[bn.gamma].value,
                        res_cache,
                        dg,
                        dbt,
                    );
                    let (dw, dbias) = two_mut(&mut grads, weight, bias);
                    let dxr = layers::pointwise_backward(
                        &dr,
                        &bc.input,
                        d,
                        &self.params[weight].value,
                        b.c_out,
                        b.stride,
                        dw,
                        dbias,
                        true,
                    )
                    .unwrap_or_default();
                    dx.iter_mut().zip(&dxr).for_each(|(a, b)| *a += b);
                }
            }
            let (dg, dbt) = two_mut(&mut grads, b.bn2.gamma, b.bn2.beta);
            let dh = layers::batch_norm_backward(
                &dy,
                od,
                BnLayout::Channel,
                &self.params[b.bn2.gamma].value,
                &bc.bn2,
                dg,
                dbt,
            );
            let (dw, dbias) = two_mut(&mut grads, b.tcn_w, b.tcn_b);
            let mut da = layers::temporal_conv_backward(
                &dh,
                &bc.act1,
                gd,
                &self.params[b.tcn_w].value,
                b.c_out,
                self.config.temporal_kernel,
                b.stride,
                dw,
                dbias,
                true,
            )
            .unwrap_or_default();
            layers::relu_backward(&mut da, &bc.act1);
            let (dg, dbt) = two_mut(&mut grads, b.bn1.gamma, b.bn1.beta);
            let dgc = layers::batch_norm_backward(
                &da,
                gd,
                BnLayout::Channel,
                &self.params[b.bn1.gamma].value,
                &bc.bn1,
                dg,
                dbt,
            );
            let need_dx = layer > 1 || stop == 1;
            let (dw, dbias) = two_mut(&mut grads, b.gcn_w, b.gcn_b);
            if let Some(dxg) = layers::graph_conv_backward(
                &dgc,
                d,
                &self.sparse,
                &self.params[b.gcn_w].value,
                b.c_out,
                &bc.gcn,
                dw,
                Some(dbias),
                need_dx,
            ) {
                dx.iter_mut().zip(&dxg).for_each(|(a, b)| *a += b);
            }
            dy = dx;
        }
        if stop == 1 {
            let bn = self.data_bn;
            let (dg, dbt) = two_mut(&mut grads, bn.gamma, bn.beta);
            layers::batch_norm_backward(
                &dy,
                cache.dims,
                BnLayout::ChannelJoint,
                &self.params[bn.gamma].value,
                &cache.data_bn,
                dg,
                dbt,
            );
        }
        grads
    }
}

fn two_mut(grads: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "parameter ids must be increasing");
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Spatial graph convolution of one `[C_in, T, V]` sample without bias:
/// `out[o, t, j] = Σ_p Σ_c W_p[o, c] Σ_i A_p[j][i] x[c, t, i]`.
///
/// `weights[p]` is row-major `[C_out, C_in]`.
pub fn graph_conv(
    x: &[f64],
    c_in: usize,
    frames: usize,
    adjacency: &PartitionedAdjacency,
    weights: &[Vec<f64>],
    c_out: usize,
) -> Result<Vec<f64>> {
    let v = adjacency.num_joints;
    if x.len() != c_in * frames * v {
        return Err(Error::shape(format!(
            "input has {} values, expected {c_in}x{frames}x{v}",
            x.len()
        )));
    }
    if weights.len() != adjacency.num_partitions() {
        return Err(Error::shape(format!(
            "{} weight matrices for {} partitions",
            weights.len(),
            adjacency.num_partitions()
        )));
    }
    if let Some(w) = weights.iter().find(|w| w.len() != c_out * c_in) {
        return Err(Error::shape(format!(
            "weight matrix has {} entries, expected {c_out}x{c_in}",
            w.len()
        )));
    }
    let flat: Vec<f64> = weights.iter().flatten().copied().collect();
    let sparse = SparseAdjacency::new(adjacency);
    let (y, _) = layers::graph_conv_forward(x, Dims::new(1, c_in, frames, v), &sparse, &flat, None, c_out);
    Ok(y)
}
