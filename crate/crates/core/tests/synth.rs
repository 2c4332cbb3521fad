use stgcn::features::{coordinate_features, train_classifier, ClassifierKind, ClassifierSpec};
use stgcn::preprocess::{split, SplitSpec};
use stgcn::synth::{align, generate, transfer_benchmark, Family, GeneratorSpec, Primitive};

fn separability(noise: f64, seed: u64) -> f64 {
    let mut spec = GeneratorSpec::new(Family::A, vec![Primitive::Wave, Primitive::Bow, Primitive::Kick], 20, 16, seed);
    spec.noise_std = noise;
    let data = align(&generate(&spec).unwrap()).unwrap();
    let (tr, va) = split(&data, &SplitSpec::random(0.5, seed)).unwrap();
    let (ftr, fva) = (coordinate_features(&tr).unwrap(), coordinate_features(&va).unwrap());
    let clf = ClassifierSpec::new(ClassifierKind::LogregMultinomial, seed);
    train_classifier(&ftr, &fva, &clf).unwrap().1.top1_accuracy
}

#[test]
fn low_noise_classes_are_separable() {
    for seed in 0..3 {
        let acc = separability(0.01, seed);
        assert!(acc >= 0.9, "seed {seed}: {acc}");
    }
}

#[test]
fn separability_falls_with_noise() {
    let levels = [0.01, 0.3, 1.0];
    let means: Vec<f64> = levels
        .iter()
        .map(|&n| (0..5).map(|s| separability(n, s)).sum::<f64>() / 5.0)
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{means:?}");
    assert!(means[2] < means[0], "{means:?}");
}

#[test]
fn generation_is_deterministic() {
    let spec = GeneratorSpec::new(Family::B, Primitive::ALL.to_vec(), 2, 8, 9);
    assert_eq!(generate(&spec).unwrap().samples, generate(&spec).unwrap().samples);
    let mut other = spec.clone();
    other.seed = 10;
    assert_ne!(generate(&spec).unwrap().samples, generate(&other).unwrap().samples);
    let (a, b) = transfer_benchmark(3).unwrap();
    let (c, d) = transfer_benchmark(3).unwrap();
    assert_eq!((a.samples, b.samples), (c.samples, d.samples));
}

#[test]
fn benchmark_shapes() {
    let (source, target) = transfer_benchmark(0).unwrap();
    assert_eq!((source.num_classes(), target.num_classes()), (5, 3));
    assert_eq!(source.len(), 5 * 24);
    assert_eq!(target.len(), 3 * 12);
    assert_eq!(source.uniform_frames(), target.uniform_frames());
}
