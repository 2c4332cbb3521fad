use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::TopologyKind;

/// One single-body action sample.
///
/// Coordinates are stored channel-major as `[3, T, V]` (x, y, z in metres);
/// the body axis of the on-disk `[3, T, V, 1]` layout is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    coords: Vec<f64>,
    frames: usize,
    joints: usize,
    pub label: usize,
    pub subject_id: u32,
    pub frame_rate: f64,
    pub topology: TopologyKind,
}

impl SkeletonSequence {
    pub fn zeros(frames: usize, joints: usize, topology: TopologyKind) -> Self {
        SkeletonSequence {
            coords: vec![0.0; 3 * frames * joints],
            frames,
            joints,
            label: 0,
            subject_id: 0,
            frame_rate: 30.0,
            topology,
        }
    }

    pub fn from_coords(
        coords: Vec<f64>,
        frames: usize,
        joints: usize,
        topology: TopologyKind,
    ) -> Result<Self> {
        if coords.len() != 3 * frames * joints {
            return Err(Error::shape(format!(
                "expected 3x{frames}x{joints} = {} coordinates, got {}",
                3 * frames * joints,
                coords.len()
            )));
        }
        if let Some(v) = topology.joint_count() {
            if v != joints {
                return Err(Error::shape(format!("{topology} has {v} joints, got {joints}")));
            }
        }
        Ok(SkeletonSequence {
            coords,
            frames,
            joints,
            label: 0,
            subject_id: 0,
            frame_rate: 30.0,
            topology,
        })
    }

    pub fn with_meta(mut self, label: usize, subject_id: u32, frame_rate: f64) -> Self {
        self.label = label;
        self.subject_id = subject_id;
        self.frame_rate = frame_rate;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    #[inline]
    fn index(&self, c: usize, t: usize, v: usize) -> usize {
        (c * self.frames + t) * self.joints + v
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, v: usize) -> f64 {
        self.coords[self.index(c, t, v)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: usize, value: f64) {
        let i = self.index(c, t, v);
        self.coords[i] = value;
    }

    pub fn point(&self, t: usize, v: usize) -> [f64; 3] {
        [self.get(0, t, v), self.get(1, t, v), self.get(2, t, v)]
    }

    pub fn set_point(&mut self, t: usize, v: usize, p: [f64; 3]) {
        for (c, value) in p.into_iter().enumerate() {
            self.set(c, t, v, value);
        }
    }

    /// A frame with every coordinate exactly zero (Kinect's "not tracked").
    pub fn frame_is_empty(&self, t: usize) -> bool {
        (0..3).all(|c| (0..self.joints).all(|v| self.get(c, t, v) == 0.0))
    }

    /// Builds a new sequence from a list of source frame indices.
    pub fn select_frames(&self, indices: &[usize]) -> SkeletonSequence {
        let mut out = SkeletonSequence::zeros(indices.len(), self.joints, self.topology);
        for c in 0..3 {
            for (dst, &src) in indices.iter().enumerate() {
                let from = self.index(c, src, 0);
                let to = out.index(c, dst, 0);
                out.coords[to..to + self.joints]
                    .copy_from_slice(&self.coords[from..from + self.joints]);
            }
        }
        out.label = self.label;
        out.subject_id = self.subject_id;
        out.frame_rate = self.frame_rate;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite())
    }
}

/// A labelled collection of same-topology sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<SkeletonSequence>,
    pub class_names: Vec<String>,
    pub frame_rate: f64,
    pub topology: TopologyKind,
}

impl Dataset {
    pub fn new(
        samples: Vec<SkeletonSequence>,
        class_names: Vec<String>,
        frame_rate: f64,
        topology: TopologyKind,
    ) -> Result<Self> {
        let ds = Dataset {
            samples,
            class_names,
            frame_rate,
            topology,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.class_names.len() {
                return Err(Error::Format(format!(
                    "sample {i} has label {} but only {} classes",
                    s.label,
                    self.class_names.len()
                )));
            }
            if s.topology != self.topology {
                return Err(Error::WrongTopology {
                    expected: self.topology.to_string(),
                    found: s.topology.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Same metadata, different samples.
    pub fn with_samples(&self, samples: Vec<SkeletonSequence>) -> Dataset {
        Dataset {
            samples,
            class_names: self.class_names.clone(),
            frame_rate: self.frame_rate,
            topology: self.topology,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        self.with_samples(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Frame count shared by every sample, if uniform.
    pub fn uniform_frames(&self) -> Option<usize> {
        let first = self.samples.first()?.frames();
        self.samples
            .iter()
            .all(|s| s.frames() == first)
            .then_some(first)
    }
}
