//! Probability-of-false-selection estimates from macro-replication traces,
//! the exhaustive-simulation oracle, log-slope fits and optimality-gap
//! diagnostics.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::model::{AllocationFractions, AllocationState, Family, GroundTruth, ProblemSpec};
use crate::ratefn::check_shape;
use crate::rng::{cell_stream, ORACLE_EPOCH};

/// Estimated-best map at each checkpoint of one macro-replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRepTrace {
    pub checkpoints: Vec<u64>,
    /// `selected[c][j]`: estimated best design of context `j` at checkpoint `c`.
    pub selected: Vec<Vec<usize>>,
    /// Sample counts at each checkpoint.
    pub counts: Vec<Grid<u64>>,
    pub final_counts: Grid<u64>,
    pub seed: u64,
}

impl MacroRepTrace {
    pub fn new(seed: u64) -> Self {
        MacroRepTrace {
            checkpoints: Vec::new(),
            selected: Vec::new(),
            counts: Vec::new(),
            final_counts: Grid::filled(0, 0, 0),
            seed,
        }
    }

    pub fn record(&mut self, checkpoint: u64, state: &AllocationState) {
        self.checkpoints.push(checkpoint);
        self.selected.push(state.estimated_best_all());
        self.counts.push(state.counts().clone());
    }

    pub fn finish(&mut self, state: &AllocationState) {
        self.final_counts = state.counts().clone();
    }

    /// Fractions `n_ij / n` at checkpoint `index`.
    pub fn fractions_at(&self, index: usize) -> Result<AllocationFractions> {
        let counts = &self.counts[index];
        let total: u64 = counts.values().iter().sum();
        if total == 0 {
            return Err(CrsError::EmptyState);
        }
        AllocationFractions::new(counts.map(|&c| c as f64 / total as f64))
    }
}

/// PFS estimates per checkpoint with normal-approximation standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfsSeries {
    pub checkpoints: Vec<u64>,
    pub pfs_e: Vec<f64>,
    pub pfs_m: Vec<f64>,
    pub pfs_a: Vec<f64>,
    pub se_e: Vec<f64>,
    pub se_m: Vec<f64>,
    pub se_a: Vec<f64>,
    pub macro_reps: usize,
}

impl PfsSeries {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// True when `pfs_e ≤ pfs_m ≤ pfs_a` holds at every checkpoint.
    pub fn is_ordered(&self) -> bool {
        (0..self.len()).all(|c| self.pfs_e[c] <= self.pfs_m[c] && self.pfs_m[c] <= self.pfs_a[c])
    }
}

fn standard_error(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).max(0.0).sqrt()
}

/// Aggregate traces into expected, worst-case and all-contexts PFS.
pub fn estimate_pfs(traces: &[MacroRepTrace], truth: &GroundTruth, p: &[f64]) -> Result<PfsSeries> {
    let first = traces
        .first()
        .ok_or_else(|| CrsError::Aggregation("no traces".into()))?;
    let m = truth.best_design().len();
    if p.len() != m {
        return Err(CrsError::Aggregation(format!(
            "{} context probabilities for {m} contexts",
            p.len()
        )));
    }
    for t in traces {
        if t.checkpoints != first.checkpoints {
            return Err(CrsError::Aggregation(format!(
                "trace with seed {} has different checkpoints",
                t.seed
            )));
        }
        if t.selected.iter().any(|s| s.len() != m) {
            return Err(CrsError::Aggregation(format!(
                "trace with seed {} does not cover {m} contexts",
                t.seed
            )));
        }
    }

    let reps = traces.len();
    let r = reps as f64;
    let mut out = PfsSeries {
        checkpoints: first.checkpoints.clone(),
        pfs_e: Vec::new(),
        pfs_m: Vec::new(),
        pfs_a: Vec::new(),
        se_e: Vec::new(),
        se_m: Vec::new(),
        se_a: Vec::new(),
        macro_reps: reps,
    };
    for c in 0..first.checkpoints.len() {
        let mut wrong = vec![0u64; m];
        let mut any_wrong = 0u64;
        for t in traces {
            let mut miss = false;
            for (j, &sel) in t.selected[c].iter().enumerate() {
                if sel != truth.best(j) {
                    wrong[j] += 1;
                    miss = true;
                }
            }
            any_wrong += u64::from(miss);
        }
        let pfs_m = wrong.iter().copied().max().unwrap_or(0) as f64 / r;
        let pfs_a = any_wrong as f64 / r;
        // A convex combination never exceeds its largest term; the clamp only
        // removes rounding excess.
        let pfs_e = (wrong.iter().zip(p).map(|(&w, &pj)| pj * w as f64).sum::<f64>() / r)
            .clamp(0.0, pfs_m);
        out.se_e.push(standard_error(pfs_e, reps));
        out.se_m.push(standard_error(pfs_m, reps));
        out.se_a.push(standard_error(pfs_a, reps));
        out.pfs_e.push(pfs_e);
        out.pfs_m.push(pfs_m);
        out.pfs_a.push(pfs_a);
    }
    Ok(out)
}

/// Ground truth from `reps_per_cell` draws of every cell.
pub fn oracle_ground_truth(spec: &ProblemSpec, reps_per_cell: u64, seed: u64) -> Result<GroundTruth> {
    if reps_per_cell < 2 {
        return Err(CrsError::Argument("oracle needs at least 2 replications per cell".into()));
    }
    let (k, m) = (spec.k(), spec.m());
    let means = (0..k * m)
        .into_par_iter()
        .map(|cell| {
            let rng = &mut cell_stream(seed, ORACLE_EPOCH, cell);
            let (i, j) = (cell / m, cell % m);
            let mut state = AllocationState::new(1, 1);
            for _ in 0..reps_per_cell {
                state.update(0, 0, spec.sample(i, j, rng)?);
            }
            Ok(state.mean(0, 0).expect("sampled"))
        })
        .collect::<Result<Vec<f64>>>()?;
    GroundTruth::from_means(Grid::from_fn(k, m, |i, j| means[i * m + j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogSlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln pfs` against `n` over `window`.
pub fn fit_log_slope(n: &[u64], pfs: &[f64], window: Range<usize>) -> Result<LogSlopeFit> {
    if n.len() != pfs.len() {
        return Err(CrsError::Argument("checkpoint and PFS lengths differ".into()));
    }
    if window.end > n.len() || window.len() < 2 {
        return Err(CrsError::Argument(format!(
            "window {window:?} needs at least two of {} checkpoints",
            n.len()
        )));
    }
    let mut xs = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    for c in window {
        let p = pfs[c];
        if p == 0.0 {
            return Err(CrsError::Saturation { index: c, n: n[c] });
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(CrsError::Argument(format!("PFS {p} at checkpoint {c} is not a probability")));
        }
        xs.push(n[c] as f64);
        ys.push(p.ln());
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(CrsError::Argument("window checkpoints are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if sst == 0.0 { 1.0 } else { 1.0 - sse / sst };
    Ok(LogSlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Upper half, but never fewer than three points, of the leading checkpoints
/// at which every series still has at least `min_events` failures among
/// `macro_reps` replications.
///
/// Past that point the estimates are dominated by a handful of events and
/// the log turns noisy, then undefined.
pub fn slope_window(series: &[&[f64]], macro_reps: usize, min_events: f64) -> Result<Range<usize>> {
    let len = series.first().map_or(0, |s| s.len());
    let usable = (0..len)
        .take_while(|&c| series.iter().all(|s| s[c] * macro_reps as f64 >= min_events))
        .count();
    if usable < 4 {
        return Err(CrsError::ShortWindow { usable, min_events });
    }
    Ok((usable / 2).min(usable - 3)..usable)
}

/// Distance of empirical fractions from the optimality conditions, measured
/// with true means and variances of an all-normal problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityGaps {
    /// `α_b²/σ_b² − Σ_{i≠b} α_i²/σ_i²` per context.
    pub balance_gap: Vec<f64>,
    /// Range of `δ² / (σ_b²/α_b + σ_i²/α_i)` over all challenger cells.
    pub v_spread: f64,
}

pub fn optimality_gaps(spec: &ProblemSpec, fractions: &AllocationFractions) -> Result<OptimalityGaps> {
    check_shape(spec, fractions)?;
    if spec
        .models()
        .values()
        .iter()
        .any(|m| m.family() != Some(Family::Normal))
    {
        return Err(CrsError::Domain("optimality gaps need normal models in every cell".into()));
    }
    let truth = spec.require_ground_truth()?;
    let var = |i, j| spec.model(i, j).variance().expect("normal");
    let mean = |i, j| spec.model(i, j).mean().expect("normal");
    let mut balance_gap = Vec::with_capacity(spec.m());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..spec.m() {
        let b = truth.best(j);
        let ab = fractions.get(b, j);
        let mut gap = ab * ab / var(b, j);
        for i in (0..spec.k()).filter(|&i| i != b) {
            let ai = fractions.get(i, j);
            if !(ab > 0.0 && ai > 0.0) {
                return Err(CrsError::DegenerateAllocation(format!(
                    "cell (design {i}, context {j}) or its best design has zero budget"
                )));
            }
            gap -= ai * ai / var(i, j);
            let delta = mean(i, j) - mean(b, j);
            let v = delta * delta / (var(b, j) / ab + var(i, j) / ai);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        balance_gap.push(gap);
    }
    Ok(OptimalityGaps {
        balance_gap,
        v_spread: hi - lo,
    })
}
