use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::model::{AllocationFractions, ContextSet, DesignSet, DistributionModel, ProblemSpec};
use crate::policies::Policy;
use crate::problems::{self, production_line_problem, BenchmarkSpec, ProductionLineSpec};

/// Analytic distribution table, one row per design.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticTable {
    pub cells: Vec<Vec<DistributionModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub designs: Option<Vec<Vec<f64>>>,
}

impl AnalyticTable {
    pub fn to_problem(&self) -> Result<ProblemSpec> {
        let models = Grid::from_rows(self.cells.clone())?;
        let contexts = match &self.contexts {
            Some(c) => ContextSet::uniform(c.clone())?,
            None => ContextSet::indexed(models.contexts())?,
        };
        let designs = match &self.designs {
            Some(d) => DesignSet::new(d.clone())?,
            None => DesignSet::indexed(models.designs())?,
        };
        ProblemSpec::new(contexts, designs, models)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Preset(String),
    Analytic(AnalyticTable),
    Benchmark(BenchmarkSpec),
    ProductionLine(ProductionLineSpec),
}

impl ProblemConfig {
    /// The problem, without ground truth for simulator-backed cells.
    pub fn build(&self) -> Result<ProblemSpec> {
        match self {
            ProblemConfig::Preset(name) => problems::preset(name),
            ProblemConfig::Analytic(table) => table.to_problem(),
            ProblemConfig::Benchmark(b) => b.to_problem(),
            ProblemConfig::ProductionLine(p) => production_line_problem(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Equal,
    Ptv,
    EqualOcba,
    Crs,
    /// Static fractions, one row per design; runs the fixed-allocation mode.
    Fixed(Vec<Vec<f64>>),
}

impl PolicyConfig {
    pub fn sequential(&self) -> Option<Policy> {
        match self {
            PolicyConfig::Equal => Some(Policy::Equal),
            PolicyConfig::Ptv => Some(Policy::Ptv),
            PolicyConfig::EqualOcba => Some(Policy::EqualOcba),
            PolicyConfig::Crs => Some(Policy::Crs),
            PolicyConfig::Fixed(_) => None,
        }
    }
}

impl From<Policy> for PolicyConfig {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Equal => PolicyConfig::Equal,
            Policy::Ptv => PolicyConfig::Ptv,
            Policy::EqualOcba => PolicyConfig::EqualOcba,
            Policy::Crs => PolicyConfig::Crs,
        }
    }
}

fn default_n0() -> u64 {
    20
}

fn default_delta_n() -> u64 {
    1
}

fn default_oracle_reps() -> u64 {
    10_000
}

/// One experiment: a problem, a policy and a replication plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub policy: PolicyConfig,
    #[serde(default = "default_n0")]
    pub n0: u64,
    #[serde(default = "default_delta_n")]
    pub delta_n: u64,
    pub budget: u64,
    /// Defaults to 20 geometrically spaced points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    pub macro_reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Defaults to uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Replications per cell for the simulation oracle.
    #[serde(default = "default_oracle_reps")]
    pub oracle_reps: u64,
    /// Defaults to `base_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemConfig, policy: PolicyConfig, budget: u64, macro_reps: usize) -> Self {
        ExperimentConfig {
            problem,
            policy,
            n0: default_n0(),
            delta_n: default_delta_n(),
            budget,
            checkpoints: None,
            macro_reps,
            base_seed: 0,
            context_probabilities: None,
            output: None,
            threads: None,
            oracle_reps: default_oracle_reps(),
            oracle_seed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks every field that does not need the problem built.
    pub(crate) fn validate_scalars(&self) -> Result<()> {
        if self.macro_reps == 0 {
            return Err(CrsError::config("macro_reps", "must be at least 1"));
        }
        if self.delta_n == 0 {
            return Err(CrsError::config("delta_n", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(CrsError::config("threads", "must be at least 1"));
        }
        if let Some(p) = self.policy.sequential() {
            let need = if p == Policy::Equal { 1 } else { 2 };
            if self.n0 < need {
                return Err(CrsError::config(
                    "n0",
                    format!("policy {p} needs at least {need} initial samples per cell"),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn fixed_fractions(&self, spec: &ProblemSpec) -> Result<Option<AllocationFractions>> {
        let PolicyConfig::Fixed(rows) = &self.policy else {
            return Ok(None);
        };
        let grid = Grid::from_rows(rows.clone()).map_err(|e| CrsError::config("policy.fixed", e.to_string()))?;
        if grid.designs() != spec.k() || grid.contexts() != spec.m() {
            return Err(CrsError::config(
                "policy.fixed",
                format!("fractions are {}x{}, problem is {}x{}", grid.designs(), grid.contexts(), spec.k(), spec.m()),
            ));
        }
        AllocationFractions::new(grid)
            .map(Some)
            .map_err(|e| CrsError::config("policy.fixed", e.to_string()))
    }
}

/// `count` geometrically spaced integers from `low` to `high`, rounded and
/// deduplicated.
pub fn geometric_checkpoints(low: u64, high: u64, count: usize) -> Vec<u64> {
    if count <= 1 || low >= high {
        return vec![high];
    }
    let ratio = high as f64 / low as f64;
    let mut out: Vec<u64> = (0..count)
        .map(|t| (low as f64 * ratio.powf(t as f64 / (count - 1) as f64)).round() as u64)
        .collect();
    out[0] = low;
    out[count - 1] = high;
    out.dedup();
    out
}
