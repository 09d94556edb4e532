//! Sample recovery and client grouping from aggregated iterates alone.
//!
//! Every entry point takes [`PublicTrace`] views, which carry the iterates
//! and public dimensions but no ground truth.

mod grouping;
mod kmeans;
mod omp;
mod recover;

pub use grouping::{build_grouping_graph, GroupingGraph};
pub use kmeans::kmeans_baseline;
pub use omp::{omp_reconstruct, Dictionary, OmpOptions, ReconstructedActivation, SparseCode};
pub use recover::{ratio, recover_samples, Provenance, RecoveredSet, Recovery, BIAS_EPS};

pub use crate::sim::PublicTrace;
