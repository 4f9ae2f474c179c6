//! Problem instances: benchmark functions, the production line and named
//! presets.

mod benchmark;
mod production_line;

use std::sync::Arc;

pub use benchmark::{BenchmarkFunction, BenchmarkSpec};
pub use production_line::{ProductionLineSpec, Revenue};

use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::model::{BlackBox, ContextSet, DesignSet, DistributionModel, ProblemSpec};

pub const PRESET_NAMES: [&str; 5] = ["rastrigin", "sphere", "rosenbrock", "mccormick", "production_line"];

/// Production-line problem as a minimization: each cell draws the negated
/// revenue, so the best design has the smallest mean.
pub fn production_line_problem(spec: &ProductionLineSpec) -> Result<ProblemSpec> {
    spec.validate()?;
    let shared = Arc::new(spec.clone());
    let models = Grid::from_fn(spec.service_rates.len(), spec.arrival_rates.len(), |i, j| {
        let line = Arc::clone(&shared);
        DistributionModel::BlackBox(BlackBox::new(move |rng: &mut dyn rand::RngCore| -line.simulate(i, j, rng)))
    });
    ProblemSpec::new(
        ContextSet::uniform(spec.arrival_rates.iter().map(|&x| vec![x]).collect())?,
        DesignSet::new(spec.service_rates.clone())?,
        models,
    )
}

/// Named preset problem. The production line has no ground truth until one
/// is estimated with the simulation oracle.
pub fn preset(name: &str) -> Result<ProblemSpec> {
    if name == "production_line" {
        return production_line_problem(&ProductionLineSpec::preset());
    }
    let function: BenchmarkFunction = name.parse().map_err(|_| {
        CrsError::config(
            "preset",
            format!("unknown preset `{name}` (expected one of {})", PRESET_NAMES.join(", ")),
        )
    })?;
    BenchmarkSpec::preset(function).to_problem()
}
