use proptest::prelude::*;
use stgcn::model::{build_model, checkpoint, graph_conv, scale_width, ModelConfig};
use stgcn::topology::build_adjacency;
use stgcn::{PartitionStrategy, SkeletonTopology, TopologyKind};

/// Random tree given as a parent array: vertex `i > 0` hangs off `p[i] < i`.
fn tree() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, usize)> {
    (1usize..9).prop_flat_map(|v| {
        let parents: Vec<_> = (1..v).map(|i| 0..i).collect();
        (Just(v), parents, 0..v).prop_map(|(v, p, root)| {
            let edges = p.iter().enumerate().map(|(i, &q)| (q, i + 1)).collect();
            (v, edges, root)
        })
    })
}

proptest! {
    #[test]
    fn partitions_sum_to_uniform((v, edges, root) in tree()) {
        let topo = SkeletonTopology::custom(v, edges, root).unwrap();
        let uni = build_adjacency(&topo, PartitionStrategy::Uniform).unwrap();
        let sp = build_adjacency(&topo, PartitionStrategy::Spatial).unwrap();
        for k in 0..v * v {
            let s: f64 = sp.matrices.iter().map(|m| m[k]).sum();
            prop_assert!((s - uni.matrices[0][k]).abs() < 1e-15);
        }
        for r in uni.row_sums(0) {
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
        // Self loops live only in partition 0; each non-root joint has exactly
        // one centripetal neighbour, its parent.
        for j in 0..v {
            prop_assert!(sp.get(0, j, j) > 0.0);
            let inward = (0..v).filter(|&i| sp.get(1, j, i) > 0.0).count();
            prop_assert_eq!(inward, usize::from(j != root));
        }
    }

    #[test]
    fn graph_conv_is_linear_in_input((v, edges, root) in tree(), a in -2.0f64..2.0) {
        let topo = SkeletonTopology::custom(v, edges, root).unwrap();
        let adj = build_adjacency(&topo, PartitionStrategy::Spatial).unwrap();
        let (c_in, c_out, t) = (2, 2, 3);
        let x: Vec<f64> = (0..c_in * t * v).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c_in * t * v).map(|i| (i as f64 * 0.11).cos()).collect();
        let w: Vec<Vec<f64>> = (0..3).map(|p| (0..4).map(|k| (p * 4 + k) as f64 * 0.1 - 0.5).collect()).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let fx = graph_conv(&x, c_in, t, &adj, &w, c_out).unwrap();
        let fy = graph_conv(&y, c_in, t, &adj, &w, c_out).unwrap();
        let fm = graph_conv(&mix, c_in, t, &adj, &w, c_out).unwrap();
        for i in 0..fm.len() {
            prop_assert!((fm[i] - (a * fx[i] + fy[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_signal_passes_through_uniform_aggregation() {
    let topo = SkeletonTopology::for_kind(TopologyKind::KinectV2).unwrap();
    let adj = build_adjacency(&topo, PartitionStrategy::Uniform).unwrap();
    let v = topo.num_joints();
    let out = graph_conv(&vec![2.5; v], 1, 1, &adj, &[vec![1.0]], 1).unwrap();
    assert!(out.iter().all(|y| (y - 2.5).abs() < 1e-12));
}

#[test]
fn graph_conv_rejects_mismatched_weights() {
    let topo = SkeletonTopology::custom(3, vec![(0, 1), (1, 2)], 0).unwrap();
    let adj = build_adjacency(&topo, PartitionStrategy::Spatial).unwrap();
    assert!(graph_conv(&[0.0; 6], 2, 1, &adj, &[vec![1.0; 2]], 1).is_err());
}

#[test]
fn channel_widths_follow_ratio() {
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    let cfg = scale_width(&ModelConfig::new(topo, 4, 16), 0.25).unwrap();
    assert_eq!(cfg.channels(), vec![16, 16, 16, 16, 32, 32, 32, 64, 64, 64]);
    let tiny = scale_width(&cfg, 1.0 / 1000.0).unwrap();
    assert!(tiny.channels().iter().all(|&c| c >= 1));
    assert!(scale_width(&cfg, 0.0).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let topo = SkeletonTopology::custom(4, vec![(0, 1), (1, 2), (1, 3)], 1).unwrap();
    let cfg = scale_width(&ModelConfig::new(topo, 3, 8), 1.0 / 32.0).unwrap();
    let model = build_model(&cfg, 12).unwrap();
    let bytes = checkpoint::to_bytes(&model).unwrap();
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
