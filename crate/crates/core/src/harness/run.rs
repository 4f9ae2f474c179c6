use rayon::prelude::*;

use super::config::{geometric_checkpoints, ExperimentConfig, PolicyConfig};
use super::table::save_pfs_csv;
use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::measures::{estimate_pfs, oracle_ground_truth, MacroRepTrace, PfsSeries};
use crate::model::{AllocationFractions, AllocationState, ProblemSpec};
use crate::policies::{run_policy, validate_checkpoints, validate_run};
use crate::rng::{replication_seed, CellStreams};

const DEFAULT_CHECKPOINTS: usize = 20;

/// Cell counts summing to exactly `n`: floors of `n·α`, with the leftover
/// units going to the largest remainders (ties to the smallest
/// `(context, design)`).
pub fn largest_remainder(fractions: &AllocationFractions, n: u64) -> Grid<u64> {
    let (k, m) = (fractions.designs(), fractions.contexts());
    let raw = fractions.grid().map(|&a| a * n as f64);
    let mut counts = raw.map(|&x| x.floor() as u64);
    let assigned: u64 = counts.values().iter().sum();
    let mut order: Vec<(usize, usize)> = (0..m).flat_map(|j| (0..k).map(move |i| (i, j))).collect();
    let rem = |&(i, j): &(usize, usize)| raw.get(i, j) - raw.get(i, j).floor();
    order.sort_by(|a, b| rem(b).total_cmp(&rem(a)));
    for &(i, j) in order.iter().cycle().take(n.saturating_sub(assigned) as usize) {
        *counts.get_mut(i, j) += 1;
    }
    counts
}

/// One macro-replication of the fixed-allocation mode: independent fresh
/// samples at every checkpoint.
pub fn fixed_allocation_trace(
    spec: &ProblemSpec,
    fractions: &AllocationFractions,
    checkpoints: &[u64],
    seed: u64,
) -> Result<MacroRepTrace> {
    let (k, m) = (spec.k(), spec.m());
    let mut trace = MacroRepTrace::new(seed);
    let mut state = AllocationState::for_problem(spec);
    for (c, &n) in checkpoints.iter().enumerate() {
        let counts = largest_remainder(fractions, n);
        let epoch = u32::try_from(c + 1).map_err(|_| CrsError::config("checkpoints", "too many checkpoints"))?;
        let mut streams = CellStreams::new(seed, epoch, k * m);
        state = AllocationState::for_problem(spec);
        for i in 0..k {
            for j in 0..m {
                let rng = streams.cell(i * m + j);
                for _ in 0..*counts.get(i, j) {
                    state.update(i, j, spec.sample(i, j, rng)?);
                }
            }
        }
        trace.record(n, &state);
    }
    trace.finish(&state);
    Ok(trace)
}

/// A validated experiment with its problem, ground truth and checkpoints.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: ProblemSpec,
    pub checkpoints: Vec<u64>,
    fixed: Option<AllocationFractions>,
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CrsError::config("threads", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

impl Experiment {
    /// Validates the config and builds the problem. Simulator-backed
    /// problems get their ground truth from the oracle here.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate_scalars()?;
        let mut spec = config.problem.build()?;
        if let Some(p) = &config.context_probabilities {
            spec = spec
                .with_context_probabilities(p.clone())
                .map_err(|e| CrsError::config("context_probabilities", e.to_string()))?;
        }
        let fixed = config.fixed_fractions(&spec)?;
        let checkpoints = match (&fixed, &config.checkpoints) {
            (None, given) => {
                let init = config.n0 * (spec.k() * spec.m()) as u64;
                let cps = given
                    .clone()
                    .unwrap_or_else(|| geometric_checkpoints(init.max(1), config.budget, DEFAULT_CHECKPOINTS));
                validate_run(&spec, config.n0, config.delta_n, config.budget, &cps)?;
                cps
            }
            (Some(f), given) => {
                let smallest = f.grid().values().iter().cloned().filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min);
                let low = (2.0 / smallest).ceil() as u64;
                let cps = given
                    .clone()
                    .unwrap_or_else(|| geometric_checkpoints(low.min(config.budget), config.budget, DEFAULT_CHECKPOINTS));
                validate_checkpoints(&cps, 1, config.budget)?;
                let counts = largest_remainder(f, cps[0]);
                if let Some(pos) = counts.values().iter().position(|&c| c < 2) {
                    return Err(CrsError::config(
                        "policy.fixed",
                        format!(
                            "cell (design {}, context {}) gets {} samples at checkpoint {}; need at least 2",
                            pos / spec.m(),
                            pos % spec.m(),
                            counts.values()[pos],
                            cps[0]
                        ),
                    ));
                }
                cps
            }
        };
        if spec.ground_truth().is_none() {
            let seed = config.oracle_seed.unwrap_or(config.base_seed);
            let reps = config.oracle_reps;
            let truth = with_threads(config.threads, || oracle_ground_truth(&spec, reps, seed))??;
            spec = spec.with_ground_truth(truth)?;
        }
        Ok(Experiment {
            config,
            spec,
            checkpoints,
            fixed,
        })
    }

    pub fn fixed_fractions(&self) -> Option<&AllocationFractions> {
        self.fixed.as_ref()
    }

    /// One macro-replication.
    pub fn trace(&self, replication: u64) -> Result<MacroRepTrace> {
        let seed = replication_seed(self.config.base_seed, replication);
        match (&self.fixed, self.config.policy.sequential()) {
            (Some(f), _) => fixed_allocation_trace(&self.spec, f, &self.checkpoints, seed),
            (None, Some(p)) => run_policy(
                &self.spec,
                p,
                self.config.n0,
                self.config.delta_n,
                self.config.budget,
                &self.checkpoints,
                seed,
            ),
            (None, None) => unreachable!("fixed policies carry fractions"),
        }
    }

    /// All macro-replications in replication order.
    pub fn traces(&self) -> Result<Vec<MacroRepTrace>> {
        let reps = self.config.macro_reps as u64;
        with_threads(self.config.threads, || {
            (0..reps).into_par_iter().map(|r| self.trace(r)).collect::<Result<Vec<_>>>()
        })?
    }

    pub fn estimate(&self, traces: &[MacroRepTrace]) -> Result<PfsSeries> {
        estimate_pfs(
            traces,
            self.spec.require_ground_truth()?,
            self.spec.contexts().probabilities(),
        )
    }

    pub fn run(&self) -> Result<PfsSeries> {
        self.estimate(&self.traces()?)
    }
}

/// Runs every macro-replication, aggregates, and writes the CSV when an
/// output path is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PfsSeries> {
    let exp = Experiment::prepare(config.clone())?;
    let series = exp.run()?;
    if let Some(path) = &config.output {
        save_pfs_csv(&series, path)?;
    }
    Ok(series)
}

/// [`run_experiment`] for configs whose policy is a fixed fraction matrix.
pub fn run_fixed_allocation(config: &ExperimentConfig) -> Result<PfsSeries> {
    if !matches!(config.policy, PolicyConfig::Fixed(_)) {
        return Err(CrsError::config("policy", "fixed-allocation mode needs a `fixed` fraction matrix"));
    }
    run_experiment(config)
}
