//! Prototype-driven weak labeling.
//!
//! Pick representative samples ("memories") from an unlabeled dataset with a
//! randomized medoid search, ask an expert to label only those, let every
//! memory's label spread to its nearest-neighbor group, repeat for several
//! random seeds and aggregate the resulting weak-label columns into
//! probabilistic labels.
//!
//! | module          | role                                                   |
//! |-----------------|--------------------------------------------------------|
//! | [`dataset`]     | file formats, validation, synthetic data               |
//! | [`distance`]    | DTW, Euclidean, symmetric KL and the pairwise matrix   |
//! | [`memory`]      | threshold cover + local swap search for memories       |
//! | [`weak_label`]  | partitions, induced columns, budget planning, pipeline |
//! | [`label_model`] | majority vote and the EM label model                   |
//! | [`labeling`]    | oracle / interactive providers, journaled sessions     |
//! | [`service`]     | HTTP labeling session API                              |
//! | [`eval`]        | metrics, one-vs-all suite, ablation sweep              |
//! | [`cli`]         | config-driven commands behind the `memlabel` binary    |
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod eval;
pub mod label_model;
pub mod labeling;
pub mod memory;
pub mod service;
pub mod weak_label;

pub use dataset::{generate_synthetic, Dataset, GroundTruth, LabelSpace, Modality, Sample, SyntheticSpec};
pub use distance::{build_distance_matrix, DistanceFunction, DistanceKind, DistanceMatrix};
pub use error::{Error, Result};
pub use label_model::{fit_label_model, majority_vote, predict, Aggregator, EmOptions, ProbabilisticLabels};
pub use labeling::{Answer, InteractiveProvider, LabelProvider, LabelQuery, LabelSession, OracleProvider};
pub use memory::{compute_cost, generate_initial_memories, generate_memories, MemoryGenConfig, MemorySet};
pub use weak_label::{partition, plan_seeds, run_pipeline, Budget, Partition, WeakLabelMatrix};
