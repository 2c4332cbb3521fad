use proptest::prelude::*;
use stgcn::curriculum::{
    load_curriculum, make_pacing, pacing_count, pacing_json, per_class_accuracy, score_samples, scores_csv,
    select_classes, step_durations, Curriculum,
};
use stgcn::model::{scale_width, ModelConfig};
use stgcn::synth::{align, generate, Family, GeneratorSpec, Primitive};
use stgcn::train::TrainConfig;
use stgcn::{Dataset, SkeletonTopology, TopologyKind};

fn scoring_setup() -> (ModelConfig, Dataset, TrainConfig) {
    let spec = GeneratorSpec::new(Family::A, vec![Primitive::Wave, Primitive::Jump], 3, 10, 5);
    let data = align(&generate(&spec).unwrap()).unwrap();
    let topo = SkeletonTopology::for_kind(TopologyKind::Shared20).unwrap();
    let cfg = scale_width(&ModelConfig::new(topo, 2, 10), 1.0 / 32.0).unwrap();
    (cfg, data, TrainConfig::for_epochs(10).with_seed(2))
}

#[test]
fn scores_follow_samples_not_positions() {
    let (cfg, data, tc) = scoring_setup();
    let scores = score_samples(&cfg, &data, &tc).unwrap();
    let perm = [4, 1, 5, 0, 3, 2];
    let permuted = score_samples(&cfg, &data.subset(&perm), &tc).unwrap();
    for (pos, &src) in perm.iter().enumerate() {
        assert_eq!(permuted[pos], scores[src]);
    }
}

#[test]
fn duplicate_samples_score_alike() {
    let (cfg, data, tc) = scoring_setup();
    let scores = score_samples(&cfg, &data.subset(&[0, 1, 0, 2, 3, 0]), &tc).unwrap();
    assert_eq!(scores[0], scores[2]);
    assert_eq!(scores[0], scores[5]);
}

#[test]
fn durations_grow_geometrically() {
    assert_eq!(step_durations(4, 30, 1.5).unwrap(), vec![4, 6, 8, 12]);
    assert_eq!(step_durations(1, 7, 1.5).unwrap(), vec![7]);
    assert!(step_durations(5, 4, 1.5).is_err());
}

#[test]
fn curriculum_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = Curriculum::new(vec![0.2, 0.9, 0.5, 0.9], make_pacing(4, 2, 6).unwrap()).unwrap();
    assert_eq!(c.order, vec![1, 3, 2, 0]);
    let (s, p) = (dir.path().join("scores.csv"), dir.path().join("pacing.json"));
    std::fs::write(&s, scores_csv(&c)).unwrap();
    std::fs::write(&p, pacing_json(&c).unwrap()).unwrap();
    assert_eq!(load_curriculum(&s, &p).unwrap(), c);
}

proptest! {
    #[test]
    fn pacing_is_monotone_and_ends_full(n in 1usize..200, steps in 1usize..6, extra in 0usize..20) {
        let epochs = steps + extra;
        let p = make_pacing(n, steps, epochs).unwrap();
        let counts: Vec<usize> = (0..epochs).map(|e| pacing_count(&p, e)).collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(counts[epochs - 1], n);
        prop_assert!(counts[0] >= 1);
    }

    #[test]
    fn selection_ignores_row_scale(
        rows in proptest::collection::vec(proptest::collection::vec(0u32..20, 5), 5),
        scale in proptest::collection::vec(1u32..9, 5),
        target in 0usize..4,
    ) {
        let m: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect();
        let scaled: Vec<Vec<f64>> = m.iter().zip(&scale).map(|(r, &s)| r.iter().map(|x| x * f64::from(s)).collect()).collect();
        let pairs = [(0, 1)];
        prop_assert_eq!(select_classes(&m, target, &pairs).unwrap(), select_classes(&scaled, target, &pairs).unwrap());
        let acc = per_class_accuracy(&m);
        let chosen = select_classes(&m, target, &[]).unwrap();
        for w in chosen.windows(2) {
            prop_assert!(acc[w[0]] >= acc[w[1]]);
        }
    }
}
