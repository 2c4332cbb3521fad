//! Procedural skeleton motion on the shared 20-joint layout.
//!
//! A sample is a rest pose driven by forward kinematics: each motion
//! primitive rotates a few bones (and possibly the pelvis height) along a
//! smooth trajectory over normalised clip time. Amplitude, tempo and phase
//! are jittered per sample, the body is placed in front of a virtual Kinect
//! with a random yaw and offset, and Gaussian noise is added per coordinate.
//!
//! Body frame while posing: `+x` forward, `+y` to the subject's left, `+z`
//! up. Camera frame: `+y` up, the subject faces `−z`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{rotate_align, translate_to_spine};
use crate::seed;
use crate::sequence::{Dataset, SkeletonSequence};
use crate::topology::{build_topology, SkeletonTopology, TopologyKind};

/// Adult rest pose in the body frame, metres, shared20 joint order.
pub const REST_POSE: [[f64; 3]; 20] = [
    [0.0, 0.0, 1.00],   // SpineBase
    [0.0, 0.0, 1.25],   // SpineMid
    [0.0, 0.0, 1.50],   // Neck
    [0.02, 0.0, 1.68],  // Head
    [0.0, 0.18, 1.45],  // ShoulderLeft
    [0.0, 0.20, 1.17],  // ElbowLeft
    [0.02, 0.21, 0.92], // WristLeft
    [0.03, 0.21, 0.84], // HandLeft
    [0.0, -0.18, 1.45], // ShoulderRight
    [0.0, -0.20, 1.17], // ElbowRight
    [0.02, -0.21, 0.92],
    [0.03, -0.21, 0.84],
    [0.0, 0.10, 0.95], // HipLeft
    [0.0, 0.10, 0.52], // KneeLeft
    [0.0, 0.10, 0.10], // AnkleLeft
    [0.10, 0.10, 0.04],
    [0.0, -0.10, 0.95], // HipRight
    [0.0, -0.10, 0.52],
    [0.0, -0.10, 0.10],
    [0.10, -0.10, 0.04],
];

/// Limb-length factor of the child family.
pub const CHILD_SCALE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    RaiseArms,
    Wave,
    Crouch,
    Jump,
    Kick,
    Bow,
    ArmsForward,
}

impl Primitive {
    pub const ALL: [Primitive; 7] = [
        Primitive::RaiseArms,
        Primitive::Wave,
        Primitive::Crouch,
        Primitive::Jump,
        Primitive::Kick,
        Primitive::Bow,
        Primitive::ArmsForward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::RaiseArms => "raise_arms",
            Primitive::Wave => "wave",
            Primitive::Crouch => "crouch",
            Primitive::Jump => "jump",
            Primitive::Kick => "kick",
            Primitive::Bow => "bow",
            Primitive::ArmsForward => "arms_forward",
        }
    }
}

/// Body family: `A` adult proportions, `B` child proportions (limbs scaled
/// by [`CHILD_SCALE`]) with a slightly faster tempo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

impl Family {
    pub fn limb_scale(self) -> f64 {
        match self {
            Family::A => 1.0,
            Family::B => CHILD_SCALE,
        }
    }

    fn tempo(self) -> f64 {
        match self {
            Family::A => 1.0,
            Family::B => 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub classes: Vec<Primitive>,
    pub samples_per_class: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub noise_std: f64,
    pub subjects: u32,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(family: Family, classes: Vec<Primitive>, samples_per_class: usize, frames: usize, seed: u64) -> Self {
        GeneratorSpec {
            family,
            classes,
            samples_per_class,
            frames,
            frame_rate: 30.0,
            noise_std: 0.01,
            subjects: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("generator needs at least one class"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        if self.frames == 0 || self.subjects == 0 {
            return Err(Error::invalid("frames and subjects must be positive"));
        }
        Ok(())
    }
}

/// Per-sample jitter drawn by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub amplitude: f64,
    pub tempo: f64,
    pub phase: f64,
    pub yaw: f64,
    pub offset_x: f64,
    pub depth: f64,
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Rotation about the body x axis (forward). Positive angles swing a
/// hanging left arm outwards.
fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Rotation about the body y axis. Negative angles swing a hanging limb
/// forwards.
fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Parent of every shared20 joint in the kinematic tree rooted at SpineBase.
fn parents(topology: &SkeletonTopology) -> Vec<Option<usize>> {
    let mut parent = vec![None; topology.num_joints()];
    for &(p, c) in &topology.edges {
        parent[c] = Some(p);
    }
    parent
}

/// Joint order in which every parent precedes its children.
fn fk_order(parent: &[Option<usize>]) -> Vec<usize> {
    let mut order = Vec::with_capacity(parent.len());
    let mut placed = vec![false; parent.len()];
    while order.len() < parent.len() {
        for j in 0..parent.len() {
            if !placed[j] && parent[j].is_none_or(|p| placed[p]) {
                placed[j] = true;
                order.push(j);
            }
        }
    }
    order
}

/// Local bone rotations and pelvis lift of `primitive` at clip time `u`
/// (in `[0, 1)`).
fn pose_at(primitive: Primitive, u: f64, p: &MotionParams) -> ([Mat3; 20], f64) {
    let mut local = [IDENTITY; 20];
    let phi = 2.0 * PI * u * p.tempo + p.phase;
    let a = p.amplitude;
    let swell = 0.5 * (1.0 - phi.cos());
    let mut lift = 0.0;
    match primitive {
        Primitive::RaiseArms => {
            local[5] = rot_x(2.6 * a * swell);
            local[9] = rot_x(-2.6 * a * swell);
        }
        Primitive::Wave => {
            local[9] = rot_x(-1.5 * a);
            local[10] = rot_x(-0.8 - 0.7 * a * (3.0 * phi).sin());
        }
        Primitive::Crouch => {
            let bend = 1.1 * a * swell;
            local[13] = rot_y(-bend);
            local[14] = rot_y(2.0 * bend);
            local[17] = rot_y(-bend);
            local[18] = rot_y(2.0 * bend);
            lift = -0.43 * (1.0 - bend.cos());
        }
        Primitive::Jump => {
            let hop = (2.0 * phi).sin().max(0.0);
            let bend = 0.5 * a * (1.0 - hop);
            local[13] = rot_y(-bend);
            local[14] = rot_y(2.0 * bend);
            local[17] = rot_y(-bend);
            local[18] = rot_y(2.0 * bend);
            local[5] = rot_y(-0.8 * a * hop);
            local[9] = rot_y(-0.8 * a * hop);
            lift = 0.3 * a * hop;
        }
        Primitive::Kick => {
            local[17] = rot_y(-1.3 * a * phi.sin().max(0.0));
        }
        Primitive::Bow => {
            local[1] = rot_y(0.9 * a * swell);
        }
        Primitive::ArmsForward => {
            let raise = -1.5 * a * swell;
            local[5] = rot_y(raise);
            local[9] = rot_y(raise);
            local[6] = rot_x(-0.6 * a * swell);
            local[10] = rot_x(0.6 * a * swell);
        }
    }
    (local, lift)
}

/// Rest pose of `family` (limbs scaled about the floor point under the
/// pelvis).
pub fn rest_pose(family: Family) -> [[f64; 3]; 20] {
    let s = family.limb_scale();
    let mut pose = REST_POSE;
    for p in pose.iter_mut() {
        for x in p.iter_mut() {
            *x *= s;
        }
    }
    pose
}

/// Noise-free rendering of one sample.
pub fn render(spec: &GeneratorSpec, primitive: Primitive, params: &MotionParams) -> Result<SkeletonSequence> {
    let topology = build_topology(TopologyKind::Shared20)?;
    let parent = parents(&topology);
    let order = fk_order(&parent);
    let rest = rest_pose(spec.family);
    let offsets: Vec<[f64; 3]> = (0..20)
        .map(|j| match parent[j] {
            Some(p) => [rest[j][0] - rest[p][0], rest[j][1] - rest[p][1], rest[j][2] - rest[p][2]],
            None => rest[j],
        })
        .collect();
    // Body (x fwd, y left, z up) → camera (subject faces −z, y up), then yaw
    // about the camera's vertical axis.
    let to_camera: Mat3 = [[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]];
    let (sy, cy) = params.yaw.sin_cos();
    let yaw: Mat3 = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let view = mat_mul(&yaw, &to_camera);
    let scale = spec.family.limb_scale();

    let frames = spec.frames;
    let mut seq = SkeletonSequence::zeros(frames, 20, TopologyKind::Shared20);
    for t in 0..frames {
        let u = t as f64 / frames as f64;
        let (local, lift) = pose_at(primitive, u, params);
        let mut global = [IDENTITY; 20];
        let mut pos = [[0.0; 3]; 20];
        for &j in &order {
            match parent[j] {
                None => {
                    global[j] = local[j];
                    pos[j] = [offsets[j][0], offsets[j][1], offsets[j][2] + lift * scale];
                }
                Some(p) => {
                    global[j] = mat_mul(&global[p], &local[j]);
                    let d = mat_vec(&global[j], offsets[j]);
                    pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
                }
            }
        }
        for (j, p) in pos.iter().enumerate() {
            let c = mat_vec(&view, *p);
            seq.set_point(t, j, [c[0] + params.offset_x, c[1], c[2] + params.depth]);
        }
    }
    seq.frame_rate = spec.frame_rate;
    Ok(seq)
}

/// Jitter for sample `index` of class `class`.
pub fn sample_params(spec: &GeneratorSpec, class: usize, index: usize) -> MotionParams {
    let mut rng = seed::rng(spec.seed, &format!("synth/{class}/{index}"));
    MotionParams {
        amplitude: rng.random_range(0.8..1.2),
        tempo: spec.family.tempo() * rng.random_range(0.85..1.15),
        phase: rng.random_range(0.0..0.5),
        yaw: rng.random_range(-0.3..0.3),
        offset_x: rng.random_range(-0.5..0.5),
        depth: rng.random_range(2.5..3.5),
    }
}

/// Generates `samples_per_class` samples for every class, class-major.
/// Subject ids cycle through `1..=subjects` over the whole dataset.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut samples = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (class, &primitive) in spec.classes.iter().enumerate() {
        for index in 0..spec.samples_per_class {
            let params = sample_params(spec, class, index);
            let mut seq = render(spec, primitive, &params)?;
            if spec.noise_std > 0.0 {
                let mut rng = seed::rng(spec.seed, &format!("synth-noise/{class}/{index}"));
                for x in seq.coords_mut() {
                    *x += noise.sample(&mut rng);
                }
            }
            let subject = (samples.len() as u32 % spec.subjects) + 1;
            samples.push(seq.with_meta(class, subject, spec.frame_rate));
        }
    }
    let names = spec.classes.iter().map(|p| p.name().to_string()).collect();
    Dataset::new(samples, names, spec.frame_rate, TopologyKind::Shared20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub source_classes: Vec<Primitive>,
    pub target_classes: Vec<Primitive>,
    pub source_per_class: usize,
    pub target_per_class: usize,
    pub frames: usize,
    pub source_noise: f64,
    pub target_noise: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            source_classes: vec![
                Primitive::RaiseArms,
                Primitive::Wave,
                Primitive::Crouch,
                Primitive::Kick,
                Primitive::Bow,
            ],
            target_classes: vec![Primitive::Wave, Primitive::Kick, Primitive::Bow],
            source_per_class: 24,
            target_per_class: 12,
            frames: 20,
            source_noise: 0.01,
            target_noise: 0.03,
        }
    }
}

/// Spine-centred, view-aligned copy of a generated dataset.
pub fn align(dataset: &Dataset) -> Result<Dataset> {
    let topology = SkeletonTopology::for_kind(dataset.topology)?;
    let samples = dataset
        .samples
        .iter()
        .map(|s| rotate_align(&translate_to_spine(s, &topology)?, &topology))
        .collect::<Result<Vec<_>>>()?;
    Ok(dataset.with_samples(samples))
}

/// Source (adult, five classes) and target (child proportions, three
/// classes built from the same primitives) datasets, both spine-centred and
/// view-aligned.
pub fn transfer_benchmark_with(spec: &BenchmarkSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut source = GeneratorSpec::new(
        Family::A,
        spec.source_classes.clone(),
        spec.source_per_class,
        spec.frames,
        seed::derive(seed, "benchmark-source"),
    );
    source.noise_std = spec.source_noise;
    let mut target = GeneratorSpec::new(
        Family::B,
        spec.target_classes.clone(),
        spec.target_per_class,
        spec.frames,
        seed::derive(seed, "benchmark-target"),
    );
    target.noise_std = spec.target_noise;
    Ok((align(&generate(&source)?)?, align(&generate(&target)?)?))
}

pub fn transfer_benchmark(seed: u64) -> Result<(Dataset, Dataset)> {
    transfer_benchmark_with(&BenchmarkSpec::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bone_lengths(seq: &SkeletonSequence, t: usize) -> Vec<f64> {
        let topo = build_topology(TopologyKind::Shared20).unwrap();
        topo.edges
            .iter()
            .map(|&(a, b)| {
                let (p, q) = (seq.point(t, a), seq.point(t, b));
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .collect()
    }

    #[test]
    fn fk_preserves_bone_lengths_and_child_scale() {
        let spec_a = GeneratorSpec::new(Family::A, vec![Primitive::Wave], 1, 10, 1);
        let spec_b = GeneratorSpec::new(Family::B, vec![Primitive::Wave], 1, 10, 1);
        let params = sample_params(&spec_a, 0, 0);
        let a = render(&spec_a, Primitive::Crouch, &params).unwrap();
        let b = render(&spec_b, Primitive::Crouch, &params).unwrap();
        let la0 = bone_lengths(&a, 0);
        for t in 0..10 {
            for (x, y) in bone_lengths(&a, t).iter().zip(&la0) {
                assert!((x - y).abs() < 1e-9);
            }
            for (x, y) in bone_lengths(&b, t).iter().zip(&la0) {
                assert!((x - CHILD_SCALE * y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_free_samples_differ_only_by_jitter() {
        let mut spec = GeneratorSpec::new(Family::A, vec![Primitive::Kick], 2, 16, 4);
        spec.noise_std = 0.0;
        let ds = generate(&spec).unwrap();
        for i in 0..2 {
            let expected = render(&spec, Primitive::Kick, &sample_params(&spec, 0, i)).unwrap();
            assert_eq!(ds.samples[i].coords(), expected.coords());
        }
        assert_ne!(ds.samples[0].coords(), ds.samples[1].coords());
    }

    #[test]
    fn subjects_round_robin() {
        let mut spec = GeneratorSpec::new(Family::A, vec![Primitive::Kick, Primitive::Bow], 3, 8, 0);
        spec.subjects = 4;
        let ds = generate(&spec).unwrap();
        let ids: Vec<u32> = ds.samples.iter().map(|s| s.subject_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 1, 2]);
    }

    #[test]
    fn rejects_empty_class_list() {
        assert!(generate(&GeneratorSpec::new(Family::A, vec![], 1, 8, 0)).is_err());
    }
}
