//! Skeleton preprocessing.
//!
//! The full chain, in order: [`clean`] → main-actor selection (done when a
//! multi-body recording is imported, see [`select_main_actor`]) → optional
//! remap to the shared 20-joint layout → [`pad_to_frames`] →
//! [`translate_to_spine`] → [`rotate_align`] → optional [`frame_rate_adjust`]
//! and [`moving_average`] → [`split`].

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sequence::{Dataset, SkeletonSequence};
use crate::topology::{remap_to_shared, SkeletonTopology, TopologyKind};

/// Mean per-joint coordinate variance (m²) below which a sample is treated
/// as a frozen pseudo-skeleton.
pub const PSEUDO_VARIANCE_THRESHOLD: f64 = 1e-4;

/// Fraction of all-zero frames above which a sample is a pseudo-skeleton.
pub const PSEUDO_EMPTY_FRAME_FRACTION: f64 = 0.5;

pub const DEFAULT_TARGET_FRAMES: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    Empty,
    PseudoSkeleton,
    NonFinite,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub empty: usize,
    pub pseudo_skeleton: usize,
    pub non_finite: usize,
}

impl CleanReport {
    pub fn total(&self) -> usize {
        self.empty + self.pseudo_skeleton + self.non_finite
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

/// Why `seq` would be dropped by [`clean`], if at all.
pub fn noise_reason(seq: &SkeletonSequence) -> Option<RemovalReason> {
    if !seq.is_finite() {
        return Some(RemovalReason::NonFinite);
    }
    let frames = seq.frames();
    let valid: Vec<usize> = (0..frames).filter(|&t| !seq.frame_is_empty(t)).collect();
    if valid.is_empty() {
        return Some(RemovalReason::Empty);
    }
    let empty_fraction = (frames - valid.len()) as f64 / frames as f64;
    if empty_fraction > PSEUDO_EMPTY_FRAME_FRACTION {
        return Some(RemovalReason::PseudoSkeleton);
    }
    let joints = seq.joints();
    let n = valid.len() as f64;
    let mut total = 0.0;
    for c in 0..3 {
        for v in 0..joints {
            let mean = valid.iter().map(|&t| seq.get(c, t, v)).sum::<f64>() / n;
            let var = valid
                .iter()
                .map(|&t| (seq.get(c, t, v) - mean).powi(2))
                .sum::<f64>()
                / n;
            total += var;
        }
    }
    // Per-joint variance summed over the three axes, averaged over joints.
    let mean_joint_variance = total / joints as f64;
    (mean_joint_variance < PSEUDO_VARIANCE_THRESHOLD).then_some(RemovalReason::PseudoSkeleton)
}

/// Removes empty, pseudo-skeleton and non-finite samples.
pub fn clean(dataset: &Dataset) -> (Dataset, CleanReport) {
    let mut report = CleanReport::default();
    let mut kept = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        match noise_reason(s) {
            None => kept.push(s.clone()),
            Some(RemovalReason::Empty) => report.empty += 1,
            Some(RemovalReason::PseudoSkeleton) => report.pseudo_skeleton += 1,
            Some(RemovalReason::NonFinite) => report.non_finite += 1,
        }
    }
    (dataset.with_samples(kept), report)
}

/// Total displacement `Σ_t Σ_v ‖x[t+1, v] − x[t, v]‖`.
pub fn motion_energy(seq: &SkeletonSequence) -> f64 {
    let mut energy = 0.0;
    for t in 1..seq.frames() {
        for v in 0..seq.joints() {
            let a = seq.point(t - 1, v);
            let b = seq.point(t, v);
            energy += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
        }
    }
    energy
}

/// Index of the most active body. Ties go to the lower index.
pub fn main_actor_index(bodies: &[SkeletonSequence]) -> Result<usize> {
    if bodies.is_empty() {
        return Err(Error::Empty("recording has no bodies".into()));
    }
    let mut best = 0;
    let mut best_energy = motion_energy(&bodies[0]);
    for (i, b) in bodies.iter().enumerate().skip(1) {
        let e = motion_energy(b);
        if e > best_energy {
            best = i;
            best_energy = e;
        }
    }
    Ok(best)
}

pub fn select_main_actor(bodies: &[SkeletonSequence]) -> Result<SkeletonSequence> {
    let i = main_actor_index(bodies)?;
    Ok(bodies[i].clone())
}

/// Frame indices used by [`pad_to_frames`].
pub fn pad_indices(frames: usize, target: usize) -> Vec<usize> {
    if frames >= target {
        // round(k * frames / target), integer form of round-half-up
        (0..target)
            .map(|k| (2 * k * frames + target) / (2 * target))
            .collect()
    } else {
        (0..target).map(|k| k % frames).collect()
    }
}

/// Repeats short sequences cyclically and subsamples long ones uniformly so
/// the result has exactly `target` frames.
pub fn pad_to_frames(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if seq.frames() == 0 {
        return Err(Error::Empty("sequence has no frames".into()));
    }
    if target == 0 {
        return Err(Error::invalid("target frame count must be positive"));
    }
    Ok(seq.select_frames(&pad_indices(seq.frames(), target)))
}

/// Moves the root joint to the origin in every frame.
pub fn translate_to_spine(seq: &SkeletonSequence, topology: &SkeletonTopology) -> Result<SkeletonSequence> {
    check_topology(seq, topology)?;
    let root = topology.root_index;
    let mut out = seq.clone();
    for t in 0..seq.frames() {
        let origin = seq.point(t, root);
        for v in 0..seq.joints() {
            let p = seq.point(t, v);
            out.set_point(t, v, [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]]);
        }
    }
    Ok(out)
}

fn check_topology(seq: &SkeletonSequence, topology: &SkeletonTopology) -> Result<()> {
    if seq.joints() != topology.num_joints() {
        return Err(Error::shape(format!(
            "sequence has {} joints, topology {} has {}",
            seq.joints(),
            topology.kind,
            topology.num_joints()
        )));
    }
    Ok(())
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Body-frame axes measured in one frame.
///
/// `spine` runs from the spine base to the spine top; `facing` is
/// `(shoulder_left − shoulder_right) × spine`, which points out of the chest.
pub fn body_axes(seq: &SkeletonSequence, topology: &SkeletonTopology, t: usize) -> Option<([f64; 3], [f64; 3])> {
    let lm = topology.landmarks?;
    let spine = sub(seq.point(t, lm.spine_top), seq.point(t, lm.spine_base));
    let shoulders = sub(seq.point(t, lm.shoulder_left), seq.point(t, lm.shoulder_right));
    Some((spine, cross(shoulders, spine)))
}

/// Rotation (row-major 3x3) that maps the body frame of frame `t` onto
/// spine ∥ +z, facing ∥ +x.
pub fn alignment_rotation(
    seq: &SkeletonSequence,
    topology: &SkeletonTopology,
    t: usize,
) -> Result<[[f64; 3]; 3]> {
    let lm = topology.landmarks.ok_or_else(|| {
        Error::invalid(format!("topology {} has no body landmarks", topology.kind))
    })?;
    let name = |i: usize| topology.joint_names[i].clone();
    let spine = sub(seq.point(t, lm.spine_top), seq.point(t, lm.spine_base));
    let spine_len = norm(spine);
    if spine_len <= f64::EPSILON {
        return Err(Error::DegenerateGeometry {
            frame: t,
            from: name(lm.spine_base),
            to: name(lm.spine_top),
        });
    }
    let shoulders = sub(seq.point(t, lm.shoulder_left), seq.point(t, lm.shoulder_right));
    let facing = cross(shoulders, spine);
    let ez = scale(spine, 1.0 / spine_len);
    // facing is orthogonal to the spine already; re-project for stability.
    let f = sub(facing, scale(ez, dot(facing, ez)));
    let f_len = norm(f);
    if norm(shoulders) <= f64::EPSILON || f_len <= f64::EPSILON * spine_len.max(1.0) {
        return Err(Error::DegenerateGeometry {
            frame: t,
            from: name(lm.shoulder_right),
            to: name(lm.shoulder_left),
        });
    }
    let ex = scale(f, 1.0 / f_len);
    let ey = cross(ez, ex);
    Ok([ex, ey, ez])
}

pub fn apply_rotation(seq: &SkeletonSequence, r: &[[f64; 3]; 3]) -> SkeletonSequence {
    let mut out = seq.clone();
    for t in 0..seq.frames() {
        for v in 0..seq.joints() {
            let p = seq.point(t, v);
            out.set_point(t, v, [dot(r[0], p), dot(r[1], p), dot(r[2], p)]);
        }
    }
    out
}

/// Rotates the whole sequence once, using the first non-empty frame, so the
/// subject faces +x with the spine along +z.
pub fn rotate_align(seq: &SkeletonSequence, topology: &SkeletonTopology) -> Result<SkeletonSequence> {
    check_topology(seq, topology)?;
    let t0 = (0..seq.frames())
        .find(|&t| !seq.frame_is_empty(t))
        .ok_or_else(|| Error::Empty("no non-empty frame to align".into()))?;
    let r = alignment_rotation(seq, topology, t0)?;
    Ok(apply_rotation(seq, &r))
}

pub fn frame_rate_indices(frames: usize, keep_every: usize) -> Vec<usize> {
    (0..frames).step_by(keep_every.max(1)).collect()
}

/// Keeps frames `0, k, 2k, ...` and divides the frame rate by `k`.
pub fn frame_rate_adjust(seq: &SkeletonSequence, keep_every: usize) -> Result<SkeletonSequence> {
    if keep_every == 0 {
        return Err(Error::invalid("keep_every must be at least 1"));
    }
    let mut out = seq.select_frames(&frame_rate_indices(seq.frames(), keep_every));
    out.frame_rate = seq.frame_rate / keep_every as f64;
    Ok(out)
}

/// Centred moving average over `window` frames; windows are truncated at the
/// sequence ends.
pub fn moving_average(seq: &SkeletonSequence, window: usize) -> Result<SkeletonSequence> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("smoothing window must be odd, got {window}")));
    }
    let half = window / 2;
    let frames = seq.frames();
    let mut out = seq.clone();
    for c in 0..3 {
        for v in 0..seq.joints() {
            for t in 0..frames {
                let lo = t.saturating_sub(half);
                let hi = (t + half).min(frames - 1);
                let sum: f64 = (lo..=hi).map(|u| seq.get(c, u, v)).sum();
                out.set(c, t, v, sum / (hi - lo + 1) as f64);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Subject id 0 means "unknown" and is rejected.
    CrossSubject { train_subjects: BTreeSet<u32> },
    RandomRatio { train_fraction: f64, seed: u64 },
}

impl SplitSpec {
    pub fn random(train_fraction: f64, seed: u64) -> Self {
        SplitSpec::RandomRatio {
            train_fraction,
            seed,
        }
    }
}

/// Partitions a dataset into train and validation sides. Each side keeps the
/// original sample order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    let mut in_train = vec![false; n];
    match spec {
        SplitSpec::CrossSubject { train_subjects } => {
            if let Some(i) = dataset.samples.iter().position(|s| s.subject_id == 0) {
                return Err(Error::invalid(format!(
                    "cross-subject split needs subject ids; sample {i} has none"
                )));
            }
            for (flag, s) in in_train.iter_mut().zip(&dataset.samples) {
                *flag = train_subjects.contains(&s.subject_id);
            }
        }
        SplitSpec::RandomRatio {
            train_fraction,
            seed,
        } => {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(Error::invalid(format!(
                    "train fraction must lie in (0, 1), got {train_fraction}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng(*seed, "split"));
            let cut = (n as f64 * train_fraction).floor() as usize;
            for &i in &order[..cut] {
                in_train[i] = true;
            }
        }
    }
    let (train, val): (Vec<_>, Vec<_>) = (0..n).partition(|&i| in_train[i]);
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub remap_to_shared: bool,
    pub target_frames: usize,
    /// Keep every k-th frame after padding.
    pub keep_every: Option<usize>,
    pub smoothing_window: Option<usize>,
    pub split: SplitSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            remap_to_shared: false,
            target_frames: DEFAULT_TARGET_FRAMES,
            keep_every: None,
            smoothing_window: None,
            split: SplitSpec::random(0.7, 0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub train: Dataset,
    pub val: Dataset,
    pub report: CleanReport,
    /// One line per stage, in execution order.
    pub log: Vec<String>,
}

/// Per-sample geometric stages of the pipeline (everything except cleaning
/// and splitting).
pub fn transform_sample(
    seq: &SkeletonSequence,
    topology: &SkeletonTopology,
    config: &PipelineConfig,
) -> Result<SkeletonSequence> {
    let mut s = if config.remap_to_shared && seq.topology == TopologyKind::KinectV2 {
        remap_to_shared(seq)?
    } else {
        seq.clone()
    };
    s = pad_to_frames(&s, config.target_frames)?;
    s = translate_to_spine(&s, topology)?;
    s = rotate_align(&s, topology)?;
    if let Some(k) = config.keep_every {
        s = frame_rate_adjust(&s, k)?;
    }
    if let Some(w) = config.smoothing_window {
        s = moving_average(&s, w)?;
    }
    Ok(s)
}

pub fn run_pipeline(dataset: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    let mut log = Vec::new();
    let (cleaned, report) = clean(dataset);
    log.push(format!(
        "clean: kept {} of {} (empty {}, pseudo-skeleton {}, non-finite {})",
        cleaned.len(),
        dataset.len(),
        report.empty,
        report.pseudo_skeleton,
        report.non_finite
    ));
    log.push("select-main-actor: applied at import (single body per sample)".to_string());

    let target_kind = if config.remap_to_shared && dataset.topology == TopologyKind::KinectV2 {
        log.push("remap: kinect_v2 -> shared20".to_string());
        TopologyKind::Shared20
    } else {
        dataset.topology
    };
    let topology = SkeletonTopology::for_kind(target_kind)?;
    let mut samples = Vec::with_capacity(cleaned.len());
    for (i, s) in cleaned.samples.iter().enumerate() {
        let out = transform_sample(s, &topology, config).map_err(|e| match e {
            Error::DegenerateGeometry { frame, from, to } => Error::DegenerateGeometry {
                frame,
                from: format!("sample {i} {from}"),
                to,
            },
            other => other,
        })?;
        samples.push(out);
    }
    log.push(format!("pad: {} frames", config.target_frames));
    log.push(format!("translate: root joint {}", topology.joint_names[topology.root_index]));
    log.push("rotate: once per sequence from the first non-empty frame".to_string());
    let mut frame_rate = dataset.frame_rate;
    if let Some(k) = config.keep_every {
        frame_rate /= k as f64;
        log.push(format!("frame-rate: keep every {k} frame(s), {frame_rate} fps"));
    }
    if let Some(w) = config.smoothing_window {
        log.push(format!("smooth: moving average window {w}"));
    }
    let processed = Dataset {
        samples,
        class_names: cleaned.class_names.clone(),
        frame_rate,
        topology: target_kind,
    };
    let (train, val) = split(&processed, &config.split)?;
    log.push(format!("split: {} train / {} val", train.len(), val.len()));
    Ok(PipelineOutput {
        train,
        val,
        report,
        log,
    })
}
