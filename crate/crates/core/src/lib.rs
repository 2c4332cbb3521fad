//! Skeleton-based activity recognition built around a spatial-temporal graph
//! convolutional network (ST-GCN).
//!
//! The crate covers the whole pipeline used to move a model trained on adult
//! Kinect recordings onto small child-activity datasets:
//!
//! * [`topology`]: Kinect v1/v2 skeletons, the shared 20-joint layout and the
//!   partitioned adjacency used by the graph convolution.
//! * [`preprocess`]: cleaning, main-actor selection, fixed-length padding,
//!   spine-centred translation, view alignment, frame-rate reduction,
//!   smoothing and train/validation splits.
//! * [`model`]: the ten-block ST-GCN with a width ratio, its hand-written
//!   backward pass and the checkpoint format.
//! * [`train`]: deterministic SGD training, metrics and a finite-difference
//!   gradient check.
//! * [`transfer`]: layer freezing / re-initialisation plans and head
//!   replacement.
//! * [`features`]: feature extraction from intermediate blocks, fusion,
//!   PCA / truncated SVD and linear classifiers.
//! * [`curriculum`]: easiness scoring, step pacing and class-subset selection.
//! * [`synth`]: a procedural skeleton-motion generator for desk-scale runs.
//! * [`io`]: dataset containers and importers.

pub mod curriculum;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod preprocess;
pub mod seed;
pub mod sequence;
pub mod synth;
pub mod topology;
pub mod train;
pub mod transfer;

pub use error::{Error, ErrorKind, Result};
pub use sequence::{Dataset, SkeletonSequence};
pub use topology::{PartitionStrategy, PartitionedAdjacency, SkeletonTopology, TopologyKind};
