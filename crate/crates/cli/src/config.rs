//! Experiment files.
//!
//! TOML: top-level `seed` (and optional `label`), then sections. `[data]`
//! is required; `[model]`, `[train]` and `[head]` have defaults; at most one
//! of `[transfer]`, `[features]` or `[curriculum]` selects the experiment
//! kind. Relative paths resolve against the config file's directory.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! train = "prep/train.stgd"
//! val = "prep/val.stgd"
//!
//! [model]
//! width_ratio = 0.0625
//!
//! [train]
//! epochs = 30
//! batch_size = 4
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use stgcn::features::{ClassifierKind, ClassifierSpec, Pooling, ReductionMethod};
use stgcn::model::{HeadSpec, ModelConfig, DEFAULT_TEMPORAL_KERNEL};
use stgcn::train::TrainConfig;
use stgcn::transfer::{TransferMode, TransferPlan};
use stgcn::{seed, PartitionStrategy, SkeletonTopology};

use crate::ConfigError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Column name used by `report`; defaults to the evaluation file stem.
    pub label: Option<String>,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub head: HeadSection,
    pub transfer: Option<TransferSection>,
    pub features: Option<FeatureSection>,
    pub curriculum: Option<CurriculumSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub val: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width_ratio: f64,
    pub temporal_kernel: usize,
    pub partition: PartitionStrategy,
    /// Every block at 256 channels instead of the 64/128/256 ladder.
    pub flat_256: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width_ratio: 1.0,
            temporal_kernel: DEFAULT_TEMPORAL_KERNEL,
            partition: PartitionStrategy::Spatial,
            flat_256: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Vec<f64>,
    /// Defaults to one and two thirds of `epochs`.
    pub lr_boundaries: Option<Vec<usize>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr_values,
            lr_boundaries: None,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub checkpoint: PathBuf,
    pub mode: TransferMode,
    #[serde(default)]
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    /// Omit to extract from an untrained network built from `[model]`.
    pub checkpoint: Option<PathBuf>,
    /// One block, or two or three consecutive blocks to fuse.
    pub layers: Vec<usize>,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
    pub reduction: Option<ReductionMethod>,
    pub dims: Option<usize>,
    pub classifier: Option<ClassifierKind>,
    #[serde(default = "one")]
    pub reg_constant: f64,
    #[serde(default)]
    pub ffnn_hidden: Vec<usize>,
    #[serde(default = "sixty")]
    pub ffnn_epochs: usize,
}

fn default_pooling() -> Pooling {
    Pooling::Gap
}

fn one() -> f64 {
    1.0
}

fn sixty() -> usize {
    60
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    pub steps: usize,
    pub ratio: f64,
    /// Multiplies every learning rate of the schedule.
    pub lr_scale: f64,
    /// Precomputed `sample_id,score` file; scored from scratch when absent.
    pub scores: Option<PathBuf>,
    pub pacing: Option<PathBuf>,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        CurriculumSection {
            steps: 4,
            ratio: 1.5,
            lr_scale: 1.0,
            scores: None,
            pacing: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Train,
    Finetune,
    Extract,
    Curriculum,
}

impl ExperimentConfig {
    pub fn load(path: &Path, kind: Kind) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.check_kind(kind)?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        if let Some(p) = self.data.val.as_mut() {
            fix(p);
        }
        if let Some(t) = self.transfer.as_mut() {
            fix(&mut t.checkpoint);
        }
        if let Some(p) = self.features.as_mut().and_then(|f| f.checkpoint.as_mut()) {
            fix(p);
        }
        if let Some(c) = self.curriculum.as_mut() {
            for p in [c.scores.as_mut(), c.pacing.as_mut()].into_iter().flatten() {
                fix(p);
            }
        }
    }

    fn check_kind(&self, kind: Kind) -> anyhow::Result<()> {
        let present = [
            (self.transfer.is_some(), Kind::Finetune, "[transfer]"),
            (self.features.is_some(), Kind::Extract, "[features]"),
            (self.curriculum.is_some(), Kind::Curriculum, "[curriculum]"),
        ];
        for (set, owner, name) in present {
            if set && owner != kind {
                bail!(ConfigError(format!("section {name} does not belong in a {kind:?} config")));
            }
            if !set && owner == kind {
                bail!(ConfigError(format!("a {kind:?} config needs a {name} section")));
            }
        }
        Ok(())
    }

    pub fn model_seed(&self) -> u64 {
        seed::derive(self.seed, "model")
    }

    pub fn head_spec(&self) -> HeadSpec {
        HeadSpec {
            hidden: self.head.hidden.clone(),
            dropout: self.head.dropout,
            seed: self.model_seed(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_values: t.lr.clone(),
            lr_boundaries: t
                .lr_boundaries
                .clone()
                .unwrap_or_else(|| TrainConfig::for_epochs(t.epochs).lr_boundaries),
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            seed: seed::derive(self.seed, "train"),
        }
    }

    pub fn model_config(&self, topology: SkeletonTopology, classes: usize, frames: usize) -> anyhow::Result<ModelConfig> {
        let mut base = ModelConfig::new(topology, classes, frames);
        if self.model.flat_256 {
            base = base.flat_256();
        }
        base.temporal_kernel = self.model.temporal_kernel;
        base.strategy = self.model.partition;
        Ok(stgcn::model::scale_width(&base, self.model.width_ratio)?)
    }

    pub fn transfer_plan(&self) -> Option<TransferPlan> {
        self.transfer
            .as_ref()
            .map(|t| TransferPlan::new(t.mode, t.n, self.head_spec()))
    }

    pub fn classifier_spec(&self) -> Option<ClassifierSpec> {
        let f = self.features.as_ref()?;
        let kind = f.classifier?;
        Some(ClassifierSpec {
            kind,
            reg_constant: f.reg_constant,
            ffnn_hidden: f.ffnn_hidden.clone(),
            ffnn_epochs: f.ffnn_epochs,
            seed: seed::derive(self.seed, "classifier"),
        })
    }
}
