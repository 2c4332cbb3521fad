//! Fine-tuning plans over a pre-trained backbone.
//!
//! Blocks are numbered 1 (input side) to 10 (next to the classifier); "top
//! n" means blocks `11 − n ..= 10`. Frozen blocks keep their batch-norm
//! running statistics too, since batch norm only uses batch statistics when
//! its scale is trainable.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{checkpoint, HeadSpec, ParamKind, StGcn, NUM_BLOCKS};
use crate::topology::SkeletonTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Train the top `n` blocks and the head; keep the rest frozen.
    FrozenTopN,
    /// Re-initialise and train the top `n` blocks; freeze the rest.
    HybridFrozen,
    /// Re-initialise the top `n` blocks; fine-tune everything.
    HybridFinetuned,
    /// Fine-tune everything from the pre-trained values.
    Propagation,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::FrozenTopN => "frozen_top_n",
            TransferMode::HybridFrozen => "hybrid_frozen",
            TransferMode::HybridFinetuned => "hybrid_finetuned",
            TransferMode::Propagation => "propagation",
        }
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen_top_n" | "frozen" => Ok(TransferMode::FrozenTopN),
            "hybrid_frozen" => Ok(TransferMode::HybridFrozen),
            "hybrid_finetuned" => Ok(TransferMode::HybridFinetuned),
            "propagation" => Ok(TransferMode::Propagation),
            other => Err(Error::invalid(format!("unknown transfer mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub mode: TransferMode,
    /// Number of top blocks affected; ignored by `Propagation`.
    pub n: usize,
    /// New classifier head. Its seed also drives block re-initialisation.
    pub head: HeadSpec,
}

/// What a plan does to one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamRole {
    Frozen,
    Trainable,
    Reinitialized,
}

impl TransferPlan {
    pub fn new(mode: TransferMode, n: usize, head: HeadSpec) -> Self {
        TransferPlan { mode, n, head }
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        match self.mode {
            TransferMode::FrozenTopN if !(1..NUM_BLOCKS).contains(&self.n) => Err(Error::invalid(format!(
                "frozen_top_n needs 1 <= n < {NUM_BLOCKS}, got {}",
                self.n
            ))),
            TransferMode::HybridFrozen | TransferMode::HybridFinetuned if !(1..=NUM_BLOCKS).contains(&self.n) => {
                Err(Error::invalid(format!(
                    "{} needs 1 <= n <= {NUM_BLOCKS}, got {}",
                    self.mode.as_str(),
                    self.n
                )))
            }
            _ => Ok(()),
        }
    }

    fn top(&self) -> std::ops::RangeInclusive<usize> {
        match self.mode {
            TransferMode::Propagation => 1..=NUM_BLOCKS,
            _ => NUM_BLOCKS + 1 - self.n..=NUM_BLOCKS,
        }
    }

    /// Blocks re-drawn by the plan.
    pub fn reinitialized_blocks(&self) -> Vec<usize> {
        match self.mode {
            TransferMode::HybridFrozen | TransferMode::HybridFinetuned => self.top().collect(),
            _ => Vec::new(),
        }
    }

    pub fn trainable_blocks(&self) -> Vec<usize> {
        match self.mode {
            TransferMode::FrozenTopN | TransferMode::HybridFrozen => self.top().collect(),
            TransferMode::HybridFinetuned | TransferMode::Propagation => (1..=NUM_BLOCKS).collect(),
        }
    }

    /// Role of every block (1-based) under this plan; the head is always
    /// trainable.
    pub fn block_role(&self, layer: usize) -> ParamRole {
        if self.reinitialized_blocks().contains(&layer) {
            ParamRole::Reinitialized
        } else if self.trainable_blocks().contains(&layer) {
            ParamRole::Trainable
        } else {
            ParamRole::Frozen
        }
    }
}

/// Parameter name → role under `plan`. Running statistics follow their
/// block.
pub fn parameter_roles(model: &StGcn, plan: &TransferPlan) -> BTreeMap<String, ParamRole> {
    let mut roles = BTreeMap::new();
    for layer in 1..=NUM_BLOCKS {
        let role = plan.block_role(layer);
        for id in model.block_param_ids(layer) {
            roles.insert(model.params()[id].name.clone(), role);
        }
    }
    for id in model.head_param_ids() {
        roles.insert(model.params()[id].name.clone(), ParamRole::Trainable);
    }
    roles
}

/// Re-draws the named blocks (1-based) from `seed` exactly as a fresh model
/// built with that seed would; batch-norm statistics are reset.
pub fn reinitialize_layers(model: &mut StGcn, layers: &[usize], seed: u64) -> Result<()> {
    if let Some(&bad) = layers.iter().find(|&&l| !(1..=NUM_BLOCKS).contains(&l)) {
        return Err(Error::invalid(format!("layer {bad} outside 1..={NUM_BLOCKS}")));
    }
    for &layer in layers {
        model.init_block(layer, seed);
    }
    Ok(())
}

/// Sets trainable flags (and re-initialises blocks for the hybrid modes).
/// The head is left as is and marked trainable.
pub fn apply_plan(model: &mut StGcn, plan: &TransferPlan) -> Result<()> {
    plan.validate()?;
    reinitialize_layers(model, &plan.reinitialized_blocks(), plan.head.seed)?;
    let trainable = plan.trainable_blocks();
    for layer in 1..=NUM_BLOCKS {
        model.set_block_trainable(layer, trainable.contains(&layer));
    }
    model.set_head_trainable(true);
    Ok(())
}

/// Keeps the backbone of `pretrained` and gives it a freshly initialised
/// head for `target_classes`. The target skeleton must have the same joint
/// count; datasets recorded with another sensor have to be remapped to the
/// shared 20-joint layout before pre-training.
pub fn adapt_pretrained(
    mut pretrained: StGcn,
    target: &SkeletonTopology,
    target_classes: usize,
    head: HeadSpec,
) -> Result<StGcn> {
    let v = pretrained.config().num_joints();
    if v != target.num_joints() {
        return Err(Error::Incompatible(format!(
            "checkpoint expects {v} joints but the target skeleton ({}) has {}; \
             remap both datasets to the shared 20-joint layout before pre-training",
            target.kind,
            target.num_joints()
        )));
    }
    pretrained.rebuild_head(target_classes, head)?;
    for p in pretrained.params_mut() {
        if p.kind == ParamKind::Weight {
            p.trainable = true;
        }
    }
    Ok(pretrained)
}

pub fn load_pretrained(
    path: impl AsRef<Path>,
    target: &SkeletonTopology,
    target_classes: usize,
    head: HeadSpec,
) -> Result<StGcn> {
    adapt_pretrained(checkpoint::load(path)?, target, target_classes, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, scale_width, ModelConfig};
    use crate::topology::{build_topology, TopologyKind};

    fn model(seed: u64) -> StGcn {
        let topo = SkeletonTopology::custom(4, vec![(0, 1), (1, 2), (1, 3)], 1).unwrap();
        build_model(&scale_width(&ModelConfig::new(topo, 3, 8), 1.0 / 32.0).unwrap(), seed).unwrap()
    }

    #[test]
    fn plan_bounds() {
        let h = HeadSpec::linear(0);
        assert!(TransferPlan::new(TransferMode::FrozenTopN, 10, h.clone()).validate().is_err());
        assert!(TransferPlan::new(TransferMode::FrozenTopN, 0, h.clone()).validate().is_err());
        assert!(TransferPlan::new(TransferMode::HybridFrozen, 10, h.clone()).validate().is_ok());
        assert!(TransferPlan::new(TransferMode::HybridFinetuned, 11, h.clone()).validate().is_err());
        assert!(TransferPlan::new(TransferMode::Propagation, 0, h).validate().is_ok());
    }

    #[test]
    fn frozen_top_one_trains_only_block_ten() {
        let mut m = model(1);
        apply_plan(&mut m, &TransferPlan::new(TransferMode::FrozenTopN, 1, HeadSpec::linear(2))).unwrap();
        for l in 1..=9 {
            assert!(!m.block_trainable(l));
        }
        assert!(m.block_trainable(10));
        assert!(m.head_param_ids().iter().all(|&i| m.params()[i].trainable));
    }

    #[test]
    fn reinit_of_nothing_or_top_leaves_rest_alone() {
        let base = model(1);
        let mut m = base.clone();
        reinitialize_layers(&mut m, &[], 9).unwrap();
        assert_eq!(m.params(), base.params());
        reinitialize_layers(&mut m, &[10], 9).unwrap();
        for l in 1..=9 {
            for id in base.block_param_ids(l) {
                assert_eq!(m.params()[id], base.params()[id]);
            }
        }
        let mut again = base.clone();
        reinitialize_layers(&mut again, &[10], 9).unwrap();
        assert_eq!(again.params(), m.params());
        assert!(reinitialize_layers(&mut m, &[11], 0).is_err());
    }

    #[test]
    fn joint_mismatch_cites_remap() {
        let m = model(0);
        let v2 = build_topology(TopologyKind::KinectV2).unwrap();
        let err = adapt_pretrained(m, &v2, 3, HeadSpec::linear(0)).unwrap_err().to_string();
        assert!(err.contains("remap"), "{err}");
    }
}
