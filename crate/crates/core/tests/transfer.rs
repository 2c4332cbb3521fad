use stgcn::model::{build_model, scale_width, HeadSpec, ModelConfig, StGcn, NUM_BLOCKS};
use stgcn::transfer::{adapt_pretrained, apply_plan, parameter_roles, ParamRole, TransferMode, TransferPlan};
use stgcn::{SkeletonTopology, TopologyKind};

fn pretrained() -> StGcn {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    build_model(&scale_width(&ModelConfig::new(topo, 5, 8), 1.0 / 32.0).unwrap(), 1).unwrap()
}

fn plans() -> Vec<TransferPlan> {
    let mut out = Vec::new();
    for n in 1..NUM_BLOCKS {
        out.push(TransferPlan::new(TransferMode::FrozenTopN, n, HeadSpec::linear(7)));
    }
    for n in 1..=NUM_BLOCKS {
        out.push(TransferPlan::new(TransferMode::HybridFrozen, n, HeadSpec::linear(7)));
        out.push(TransferPlan::new(TransferMode::HybridFinetuned, n, HeadSpec::linear(7)));
    }
    out.push(TransferPlan::new(TransferMode::Propagation, 0, HeadSpec::linear(7)));
    out
}

#[test]
fn roles_match_mode_semantics() {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    for plan in plans() {
        let model = adapt_pretrained(pretrained(), &topo, 3, plan.head.clone()).unwrap();
        let roles = parameter_roles(&model, &plan);
        for layer in 1..=NUM_BLOCKS {
            let top = layer > NUM_BLOCKS - plan.n;
            let expected = match plan.mode {
                TransferMode::FrozenTopN if top => ParamRole::Trainable,
                TransferMode::FrozenTopN | TransferMode::HybridFrozen if !top => ParamRole::Frozen,
                TransferMode::HybridFrozen | TransferMode::HybridFinetuned if top => ParamRole::Reinitialized,
                _ => ParamRole::Trainable,
            };
            for id in model.block_param_ids(layer) {
                assert_eq!(roles[&model.params()[id].name], expected, "{:?} n={} block {layer}", plan.mode, plan.n);
            }
        }
        for id in model.head_param_ids() {
            assert_eq!(roles[&model.params()[id].name], ParamRole::Trainable);
        }
    }
}

#[test]
fn applying_a_plan_twice_is_idempotent() {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    for plan in plans() {
        let mut once = adapt_pretrained(pretrained(), &topo, 3, plan.head.clone()).unwrap();
        apply_plan(&mut once, &plan).unwrap();
        let mut twice = once.clone();
        apply_plan(&mut twice, &plan).unwrap();
        assert_eq!(once.params(), twice.params());
    }
}

#[test]
fn trainable_flags_follow_plan() {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    for plan in plans() {
        let mut m = adapt_pretrained(pretrained(), &topo, 3, plan.head.clone()).unwrap();
        apply_plan(&mut m, &plan).unwrap();
        for layer in 1..=NUM_BLOCKS {
            assert_eq!(m.block_trainable(layer), plan.block_role(layer) != ParamRole::Frozen);
        }
    }
}

#[test]
fn frozen_blocks_keep_pretrained_values() {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    let base = pretrained();
    let plan = TransferPlan::new(TransferMode::HybridFrozen, 4, HeadSpec::linear(3));
    let mut m = adapt_pretrained(base.clone(), &topo, 3, plan.head.clone()).unwrap();
    apply_plan(&mut m, &plan).unwrap();
    for layer in 1..=6 {
        for id in base.block_param_ids(layer) {
            assert_eq!(m.params()[id], {
                let mut p = base.params()[id].clone();
                p.trainable = false;
                p
            });
        }
    }
    let changed = (7..=10).all(|l| {
        base.block_param_ids(l)
            .iter()
            .any(|&id| m.params()[id].value != base.params()[id].value)
    });
    assert!(changed);
}

#[test]
fn head_matches_requested_classes() {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    let head = HeadSpec {
        hidden: vec![8],
        dropout: 0.0,
        seed: 4,
    };
    let m = adapt_pretrained(pretrained(), &topo, 7, head).unwrap();
    assert_eq!(m.num_classes(), 7);
    assert_eq!(m.head_spec().dense_layers(), 2);
}
