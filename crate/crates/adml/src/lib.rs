//! Discriminative Mahalanobis metric learning with divide-and-conquer
//! aggregation.
//!
//! The basic learner (DDML) builds a patch around every sample (its
//! nearest same-class and other-class neighbours) and finds the projection
//! W whose induced distance ‖Wᵀ(x−y)‖ shrinks within-class patch distances
//! while stretching between-class ones. That objective is a trace
//! minimization over the patch scatter X·L·Xᵀ and is solved by a symmetric
//! eigendecomposition.
//!
//! The aggregated variants (ADML) split the data into subsets, solve each
//! subset independently (in parallel), and merge the subset bases either by
//! an inverse-weighted linear solve (ADML-I) or by a thin SVD of the summed
//! scatter-weighted bases (ADML-II). Bound diagnostics compare the merged
//! metric against the wholistic solution numerically.
//!
//! With the default `parallel` feature the map phase fans out over a rayon
//! pool; without it everything runs sequentially with identical results.

pub mod aggregate;
pub mod dataset;
pub mod error;
pub mod eval;
mod linalg;
pub mod model;
mod parallel;
pub mod patch;
pub mod runtime;
pub mod solver;

pub use aggregate::{
    aggregate_inverse, aggregate_svd, bound_report, compute_pk, BoundFlag, BoundReport,
    SvdAggregate,
};
pub use dataset::{
    detect_label_mode, gen_coiled_surfaces, load_csv, normalize, random_split, save_csv,
    CoiledParams, LabelMode, LabeledDataset, Labels, NormStats, PartitionSpec, SplitPlan,
    SubsetView,
};
pub use error::{AdmlError, Result};
pub use eval::{
    annotate, annotate_batch, f1_scores, f1_scores_over, knn_accuracy, knn_classify, mdist,
    pair_histogram, project_all, project_point, projection_csv, subspace_distance, F1Report,
    Histogram, TagStats,
};
pub use model::{Algo, MetricModel, ModelMeta, PhaseTimings};
pub use patch::{
    accumulate_scatter, build_local_penalty, find_patch, LocalPenalty, Patch, PatchSpec,
    ScatterMode, ScatterRep, SparsePenalty, SubsetScatter,
};
pub use runtime::{map_task, reduce_fold, train, JobConfig, WorkerResult};
pub use solver::{eigen_smallest, solve_subset, SolveMode, SpectrumDiagnostics, SubsetSolution};
