//! Contextual ranking and selection: rate functions, sampling policies,
//! benchmark problems and a replication harness.
//!
//! A problem is a `k × m` grid of stochastic cells (designs × contexts). The
//! goal is to find the design with the smallest mean in every context using
//! a fixed simulation budget.
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod harness;
pub mod measures;
pub mod model;
pub mod policies;
pub mod problems;
pub mod ratefn;
pub mod rng;

pub use error::{CrsError, Result};
pub use grid::Grid;
pub use harness::{run_experiment, ExperimentConfig, PolicyConfig, ProblemConfig};
pub use measures::{estimate_pfs, MacroRepTrace, PfsSeries};
pub use model::{
    AllocationFractions, AllocationState, BlackBox, CellSimulator, ContextSet, DesignSet,
    DistributionModel, Family, GroundTruth, ProblemSpec,
};
pub use policies::{run_policy, Policy, PolicyDecision};
pub use ratefn::{kkt_residual, overall_rate, pair_rate, solve_optimal_fractions};
