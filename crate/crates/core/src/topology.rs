//! Skeleton topologies and the partitioned adjacency used by graph convolution.
//!
//! Three layouts are built in:
//!
//! * `kinect_v2`: the 25-joint Kinect v2 skeleton in NTU RGB+D joint order.
//! * `kinect_v1`: the 20-joint Kinect v1 skeleton.
//! * `shared20`: the 20 joints both sensors have in common, named after their
//!   Kinect v2 counterparts and connected like the Kinect v1 tree.
//!
//! Going from `kinect_v2` to `shared20` drops `SpineShoulder`, `HandTipLeft`,
//! `ThumbLeft`, `HandTipRight` and `ThumbRight`; the remaining Kinect v2 joints
//! 0..20 keep their order, so shared joint `k` is Kinect v2 joint `k`.
//!
//! Adjacency matrices are row-normalised: row `j` holds the weights joint `j`
//! receives from its neighbours, so aggregation is `out[j] = Σ_i A[j][i] x[i]`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::SkeletonSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    KinectV1,
    KinectV2,
    Shared20,
    /// Hand-built graphs (tests, toy models).
    Custom,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::KinectV1 => "kinect_v1",
            TopologyKind::KinectV2 => "kinect_v2",
            TopologyKind::Shared20 => "shared20",
            TopologyKind::Custom => "custom",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TopologyKind::KinectV1 => 1,
            TopologyKind::KinectV2 => 2,
            TopologyKind::Shared20 => 3,
            TopologyKind::Custom => 0,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => TopologyKind::Custom,
            1 => TopologyKind::KinectV1,
            2 => TopologyKind::KinectV2,
            3 => TopologyKind::Shared20,
            other => return Err(Error::UnsupportedTopology(format!("code {other}"))),
        })
    }

    /// Number of joints, when the kind fixes it.
    pub fn joint_count(self) -> Option<usize> {
        match self {
            TopologyKind::KinectV1 | TopologyKind::Shared20 => Some(20),
            TopologyKind::KinectV2 => Some(25),
            TopologyKind::Custom => None,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kinect_v1" => Ok(TopologyKind::KinectV1),
            "kinect_v2" => Ok(TopologyKind::KinectV2),
            "shared20" => Ok(TopologyKind::Shared20),
            other => Err(Error::UnsupportedTopology(other.to_string())),
        }
    }
}

/// Joints used to define the body frame during view alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmarks {
    pub spine_base: usize,
    pub spine_top: usize,
    pub shoulder_left: usize,
    pub shoulder_right: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub kind: TopologyKind,
    pub joint_names: Vec<String>,
    /// `(parent, child)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub root_index: usize,
    pub landmarks: Option<Landmarks>,
}

const KINECT_V2_JOINTS: [&str; 25] = [
    "SpineBase",
    "SpineMid",
    "Neck",
    "Head",
    "ShoulderLeft",
    "ElbowLeft",
    "WristLeft",
    "HandLeft",
    "ShoulderRight",
    "ElbowRight",
    "WristRight",
    "HandRight",
    "HipLeft",
    "KneeLeft",
    "AnkleLeft",
    "FootLeft",
    "HipRight",
    "KneeRight",
    "AnkleRight",
    "FootRight",
    "SpineShoulder",
    "HandTipLeft",
    "ThumbLeft",
    "HandTipRight",
    "ThumbRight",
];

const KINECT_V2_EDGES: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (20, 2),
    (2, 3),
    (20, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 21),
    (6, 22),
    (20, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (11, 23),
    (10, 24),
    (0, 12),
    (12, 13),
    (13, 14),
    (14, 15),
    (0, 16),
    (16, 17),
    (17, 18),
    (18, 19),
];

const KINECT_V1_JOINTS: [&str; 20] = [
    "HipCenter",
    "Spine",
    "ShoulderCenter",
    "Head",
    "ShoulderLeft",
    "ElbowLeft",
    "WristLeft",
    "HandLeft",
    "ShoulderRight",
    "ElbowRight",
    "WristRight",
    "HandRight",
    "HipLeft",
    "KneeLeft",
    "AnkleLeft",
    "FootLeft",
    "HipRight",
    "KneeRight",
    "AnkleRight",
    "FootRight",
];

/// Kinect v1 tree; also the shared 20-joint tree.
const TWENTY_JOINT_EDGES: [(usize, usize); 19] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (2, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (2, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (0, 12),
    (12, 13),
    (13, 14),
    (14, 15),
    (0, 16),
    (16, 17),
    (17, 18),
    (18, 19),
];

/// Kinect v2 joints removed when remapping to `shared20`.
pub const DROPPED_V2_JOINTS: [usize; 5] = [20, 21, 22, 23, 24];

/// `SHARED20_FROM_V2[k]` is the Kinect v2 index of shared joint `k`.
pub const SHARED20_FROM_V2: [usize; 20] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19,
];

pub fn build_topology(kind: TopologyKind) -> Result<SkeletonTopology> {
    let owned = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let topology = match kind {
        TopologyKind::KinectV2 => SkeletonTopology {
            kind,
            joint_names: owned(&KINECT_V2_JOINTS),
            edges: KINECT_V2_EDGES.to_vec(),
            root_index: 1,
            landmarks: Some(Landmarks {
                spine_base: 0,
                spine_top: 20,
                shoulder_left: 4,
                shoulder_right: 8,
            }),
        },
        TopologyKind::KinectV1 => SkeletonTopology {
            kind,
            joint_names: owned(&KINECT_V1_JOINTS),
            edges: TWENTY_JOINT_EDGES.to_vec(),
            root_index: 1,
            landmarks: Some(Landmarks {
                spine_base: 0,
                spine_top: 2,
                shoulder_left: 4,
                shoulder_right: 8,
            }),
        },
        TopologyKind::Shared20 => SkeletonTopology {
            kind,
            joint_names: SHARED20_FROM_V2
                .iter()
                .map(|&i| KINECT_V2_JOINTS[i].to_string())
                .collect(),
            edges: TWENTY_JOINT_EDGES.to_vec(),
            root_index: 1,
            landmarks: Some(Landmarks {
                spine_base: 0,
                spine_top: 2,
                shoulder_left: 4,
                shoulder_right: 8,
            }),
        },
        TopologyKind::Custom => {
            return Err(Error::UnsupportedTopology(
                "custom topologies are built with SkeletonTopology::custom".into(),
            ))
        }
    };
    topology.validate()?;
    Ok(topology)
}

impl SkeletonTopology {
    /// A hand-built tree. Joint names default to `j0, j1, ...`.
    pub fn custom(num_joints: usize, edges: Vec<(usize, usize)>, root_index: usize) -> Result<Self> {
        let topology = SkeletonTopology {
            kind: TopologyKind::Custom,
            joint_names: (0..num_joints).map(|i| format!("j{i}")).collect(),
            edges,
            root_index,
            landmarks: None,
        };
        topology.validate()?;
        Ok(topology)
    }

    /// Looks up the topology for a sequence's kind. Custom kinds cannot be
    /// reconstructed from the tag alone.
    pub fn for_kind(kind: TopologyKind) -> Result<Self> {
        build_topology(kind)
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    /// Checks the tree invariants: `|E| = |V| - 1`, valid indices, no
    /// self-edges and full connectivity.
    pub fn validate(&self) -> Result<()> {
        let v = self.num_joints();
        if v == 0 {
            return Err(Error::InvalidTopology("no joints".into()));
        }
        if self.root_index >= v {
            return Err(Error::InvalidTopology(format!(
                "root index {} out of range for {v} joints",
                self.root_index
            )));
        }
        if let Some(expected) = self.kind.joint_count() {
            if v != expected {
                return Err(Error::InvalidTopology(format!(
                    "{} must have {expected} joints, found {v}",
                    self.kind
                )));
            }
        }
        if self.edges.len() + 1 != v {
            return Err(Error::InvalidTopology(format!(
                "a tree on {v} joints needs {} edges, found {}",
                v - 1,
                self.edges.len()
            )));
        }
        for &(a, b) in &self.edges {
            if a >= v || b >= v || a == b {
                return Err(Error::InvalidTopology(format!("bad edge ({a}, {b})")));
            }
        }
        let dist = self.hop_distances(self.root_index);
        if let Some(j) = dist.iter().position(|d| d.is_none()) {
            return Err(Error::InvalidTopology(format!(
                "joint {j} is not connected to the root"
            )));
        }
        Ok(())
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Breadth-first hop distance from `source` to every joint.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![None; self.num_joints()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &w in &adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Drops the five Kinect v2 joints that Kinect v1 lacks.
pub fn remap_to_shared(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.topology != TopologyKind::KinectV2 {
        return Err(Error::WrongTopology {
            expected: TopologyKind::KinectV2.to_string(),
            found: seq.topology.to_string(),
        });
    }
    let frames = seq.frames();
    let mut out = SkeletonSequence::zeros(frames, SHARED20_FROM_V2.len(), TopologyKind::Shared20);
    for c in 0..3 {
        for t in 0..frames {
            for (k, &src) in SHARED20_FROM_V2.iter().enumerate() {
                out.set(c, t, k, seq.get(c, t, src));
            }
        }
    }
    out.label = seq.label;
    out.subject_id = seq.subject_id;
    out.frame_rate = seq.frame_rate;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    Uniform,
    Spatial,
}

impl PartitionStrategy {
    pub fn num_partitions(self) -> usize {
        match self {
            PartitionStrategy::Uniform => 1,
            PartitionStrategy::Spatial => 3,
        }
    }
}

/// Stack of `V x V` row-major matrices, one per neighbourhood partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedAdjacency {
    pub strategy: PartitionStrategy,
    pub topology_kind: TopologyKind,
    pub num_joints: usize,
    pub matrices: Vec<Vec<f64>>,
}

impl PartitionedAdjacency {
    pub fn num_partitions(&self) -> usize {
        self.matrices.len()
    }

    #[inline]
    pub fn get(&self, partition: usize, row: usize, col: usize) -> f64 {
        self.matrices[partition][row * self.num_joints + col]
    }

    /// Row sums of one partition.
    pub fn row_sums(&self, partition: usize) -> Vec<f64> {
        let v = self.num_joints;
        self.matrices[partition]
            .chunks(v)
            .map(|row| row.iter().sum())
            .collect()
    }
}

/// Builds the equal-weight adjacency stack.
///
/// `A + I` is normalised once with the full (self-loop inclusive) degree, and
/// the spatial strategy then splits each row into the self entry, neighbours
/// closer to the root (centripetal) and neighbours farther from it
/// (centrifugal). The union of partitions is therefore row-stochastic.
pub fn build_adjacency(
    topology: &SkeletonTopology,
    strategy: PartitionStrategy,
) -> Result<PartitionedAdjacency> {
    topology.validate()?;
    let v = topology.num_joints();
    let neighbors = topology.neighbors();
    let depth: Vec<usize> = topology
        .hop_distances(topology.root_index)
        .into_iter()
        .map(|d| d.unwrap_or(usize::MAX))
        .collect();

    let parts = strategy.num_partitions();
    let mut matrices = vec![vec![0.0; v * v]; parts];
    for j in 0..v {
        let weight = 1.0 / (neighbors[j].len() + 1) as f64;
        match strategy {
            PartitionStrategy::Uniform => {
                matrices[0][j * v + j] = weight;
                for &i in &neighbors[j] {
                    matrices[0][j * v + i] = weight;
                }
            }
            PartitionStrategy::Spatial => {
                matrices[0][j * v + j] = weight;
                for &i in &neighbors[j] {
                    let p = if depth[i] < depth[j] { 1 } else { 2 };
                    matrices[p][j * v + i] = weight;
                }
            }
        }
    }
    Ok(PartitionedAdjacency {
        strategy,
        topology_kind: topology.kind,
        num_joints: v,
        matrices,
    })
}
