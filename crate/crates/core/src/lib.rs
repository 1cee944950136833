//! Layer-wise analysis of speech representations: REPT tensor I/O,
//! acoustic features, segment pooling, linear CKA, rank-based cluster
//! statistics and layer-curve reporting.

pub mod cka;
pub mod cluster;
pub mod features;
pub mod manifest;
pub mod par;
pub mod pool;
pub mod report;
pub mod segments;
pub mod tensor;
pub mod types;

pub use cka::{gram, linear_cka, linear_cka_with, CkaOptions, CkaVariant};
pub use cluster::{auc_binary, avg_u, avg_u_oracle, distance_matrix, DistanceSpec, Metric, UResult};
pub use features::{AcousticTarget, FeatureConfig, FeatureKind, WaveBuffer};
pub use manifest::{read_manifest, Manifest};
pub use pool::{pool, stack_layers, zscore, PoolingSpec};
pub use report::{SweepKind, SweepReport, SweepRow};
pub use segments::{read_segments, SegmentTable};
pub use tensor::{read_tensor, write_tensor};
pub use types::{FrameMatrix, LabelKey, LabelRecord, LayerStack, PooledMatrix};
