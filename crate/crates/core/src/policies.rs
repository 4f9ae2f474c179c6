//! Sequential allocation policies.
//!
//! Every policy answers "which (design, context) cell gets the next batch of
//! samples" from an [`AllocationState`]. Ties are broken towards the
//! lexicographically smallest `(context, design)`.
//!
//! The CRS statistics are compared in count form: with `n` the total,
//! `V̂ = V_count / n` and `Û = U_count / n²`, so scaling by `n` changes no
//! decision and keeps comparisons exact across the cached and uncached paths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::measures::MacroRepTrace;
use crate::model::{AllocationState, ProblemSpec};
use crate::rng::{CellStreams, SEQUENTIAL_EPOCH};

/// Sample variances below this are raised to it so that degenerate
/// (zero-noise) cells keep every statistic finite.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Equal,
    Ptv,
    EqualOcba,
    Crs,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Equal, Policy::Ptv, Policy::EqualOcba, Policy::Crs];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Equal => "equal",
            Policy::Ptv => "ptv",
            Policy::EqualOcba => "equal_ocba",
            Policy::Crs => "crs",
        }
    }

    /// One decision from scratch, without caching.
    pub fn next(self, state: &AllocationState) -> Result<PolicyDecision> {
        match self {
            Policy::Equal => Ok(equal_next(state)),
            Policy::Ptv => ptv_next(state),
            Policy::EqualOcba => equal_ocba_next(state),
            Policy::Crs => crs_next(state),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = CrsError;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CrsError::config("policy", format!("unknown policy `{s}` (expected equal, ptv, equal_ocba or crs)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrsDiagnostics {
    pub u_best: f64,
    pub u_non: f64,
    pub v_min: f64,
    pub chose_best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyDecision {
    pub design: usize,
    pub context: usize,
    pub diagnostics: Option<CrsDiagnostics>,
}

impl PolicyDecision {
    fn plain(design: usize, context: usize) -> Self {
        PolicyDecision {
            design,
            context,
            diagnostics: None,
        }
    }
}

/// Plug-in CRS statistics at the current fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct CrsStatistics {
    pub u_best: Vec<f64>,
    pub u_non: Vec<f64>,
    /// `None` exactly at each context's estimated best.
    pub v: Grid<Option<f64>>,
    pub best: Vec<usize>,
}

fn floored_variance(state: &AllocationState, i: usize, j: usize) -> f64 {
    state.variance(i, j).expect("initialized").max(VARIANCE_FLOOR)
}

/// Count-form CRS summary of one context.
#[derive(Debug, Clone, Copy)]
struct ContextSummary {
    best: usize,
    u_best: f64,
    u_non: f64,
    v_min: f64,
    challenger: usize,
}

fn v_count(state: &AllocationState, b: usize, i: usize, j: usize) -> f64 {
    let delta = state.mean(i, j).expect("initialized") - state.mean(b, j).expect("initialized");
    let nb = state.count(b, j) as f64;
    let ni = state.count(i, j) as f64;
    delta * delta / (floored_variance(state, b, j) / nb + floored_variance(state, i, j) / ni)
}

fn context_summary(state: &AllocationState, j: usize) -> ContextSummary {
    let b = state.estimated_best(j);
    let nb = state.count(b, j) as f64;
    let u_best = nb * nb / floored_variance(state, b, j);
    let mut u_non = 0.0;
    let mut v_min = f64::INFINITY;
    let mut challenger = usize::MAX;
    for i in (0..state.designs()).filter(|&i| i != b) {
        let ni = state.count(i, j) as f64;
        u_non += ni * ni / floored_variance(state, i, j);
        let v = v_count(state, b, i, j);
        if challenger == usize::MAX || v < v_min {
            v_min = v;
            challenger = i;
        }
    }
    ContextSummary {
        best: b,
        u_best,
        u_non,
        v_min,
        challenger,
    }
}

fn crs_decide(summaries: &[ContextSummary], total: u64) -> PolicyDecision {
    let mut jr = 0;
    for (j, s) in summaries.iter().enumerate().skip(1) {
        if s.v_min < summaries[jr].v_min {
            jr = j;
        }
    }
    let s = summaries[jr];
    let chose_best = s.u_best < s.u_non;
    let n = total as f64;
    PolicyDecision {
        design: if chose_best { s.best } else { s.challenger },
        context: jr,
        diagnostics: Some(CrsDiagnostics {
            u_best: s.u_best / (n * n),
            u_non: s.u_non / (n * n),
            v_min: s.v_min / n,
            chose_best,
        }),
    }
}

pub fn crs_statistics(state: &AllocationState) -> Result<CrsStatistics> {
    state.require_initialized()?;
    let n = state.total() as f64;
    let best = state.estimated_best_all();
    let mut u_best = Vec::with_capacity(state.contexts());
    let mut u_non = Vec::with_capacity(state.contexts());
    for j in 0..state.contexts() {
        let s = context_summary(state, j);
        u_best.push(s.u_best / (n * n));
        u_non.push(s.u_non / (n * n));
    }
    let v = Grid::from_fn(state.designs(), state.contexts(), |i, j| {
        (i != best[j]).then(|| v_count(state, best[j], i, j) / n)
    });
    Ok(CrsStatistics {
        u_best,
        u_non,
        v,
        best,
    })
}

pub fn crs_next(state: &AllocationState) -> Result<PolicyDecision> {
    state.require_initialized()?;
    let summaries: Vec<_> = (0..state.contexts()).map(|j| context_summary(state, j)).collect();
    Ok(crs_decide(&summaries, state.total()))
}

pub fn equal_next(state: &AllocationState) -> PolicyDecision {
    let mut pick = (0, 0);
    let mut least = u64::MAX;
    for j in 0..state.contexts() {
        for i in 0..state.designs() {
            if state.count(i, j) < least {
                least = state.count(i, j);
                pick = (i, j);
            }
        }
    }
    PolicyDecision::plain(pick.0, pick.1)
}

fn max_deficit(state: &AllocationState, target: impl Fn(usize, usize) -> f64) -> PolicyDecision {
    let n = state.total() as f64;
    let mut pick = (0, 0);
    let mut best = f64::NEG_INFINITY;
    for j in 0..state.contexts() {
        for i in 0..state.designs() {
            let deficit = target(i, j) - state.count(i, j) as f64 / n;
            if deficit > best {
                best = deficit;
                pick = (i, j);
            }
        }
    }
    PolicyDecision::plain(pick.0, pick.1)
}

pub fn ptv_next(state: &AllocationState) -> Result<PolicyDecision> {
    state.require_initialized()?;
    let var = Grid::from_fn(state.designs(), state.contexts(), |i, j| floored_variance(state, i, j));
    let sum: f64 = var.values().iter().sum();
    Ok(max_deficit(state, |i, j| var.get(i, j) / sum))
}

/// Within-context OCBA shares for context `j`, summing to one.
fn ocba_shares(state: &AllocationState, j: usize) -> Vec<f64> {
    let k = state.designs();
    let b = state.estimated_best(j);
    let mean_b = state.mean(b, j).expect("initialized");
    let mut w: Vec<f64> = (0..k)
        .map(|i| {
            if i == b {
                return 0.0;
            }
            let delta = state.mean(i, j).expect("initialized") - mean_b;
            floored_variance(state, i, j) / (delta * delta)
        })
        .collect();
    let cap = w
        .iter()
        .enumerate()
        .filter(|&(i, x)| i != b && x.is_finite())
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let cap = if cap.is_finite() { cap } else { 1.0 };
    for x in w.iter_mut() {
        if !x.is_finite() {
            *x = cap;
        }
    }
    let sb = floored_variance(state, b, j).sqrt();
    w[b] = sb
        * (0..k)
            .filter(|&i| i != b)
            .map(|i| (w[i] / floored_variance(state, i, j).sqrt()).powi(2))
            .sum::<f64>()
            .sqrt();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn equal_ocba_next(state: &AllocationState) -> Result<PolicyDecision> {
    state.require_initialized()?;
    let m = state.contexts() as f64;
    let shares: Vec<Vec<f64>> = (0..state.contexts()).map(|j| ocba_shares(state, j)).collect();
    Ok(max_deficit(state, |i, j| shares[j][i] / m))
}

/// Per-context caches so that a step only recomputes the context it sampled.
enum Cache {
    Equal,
    Ptv,
    EqualOcba(Vec<Vec<f64>>),
    Crs(Vec<ContextSummary>),
}

impl Cache {
    fn new(policy: Policy, state: &AllocationState) -> Result<Self> {
        if policy != Policy::Equal {
            state.require_initialized()?;
        }
        let m = state.contexts();
        Ok(match policy {
            Policy::Equal => Cache::Equal,
            Policy::Ptv => Cache::Ptv,
            Policy::EqualOcba => Cache::EqualOcba((0..m).map(|j| ocba_shares(state, j)).collect()),
            Policy::Crs => Cache::Crs((0..m).map(|j| context_summary(state, j)).collect()),
        })
    }

    fn refresh(&mut self, state: &AllocationState, j: usize) {
        match self {
            Cache::EqualOcba(shares) => shares[j] = ocba_shares(state, j),
            Cache::Crs(summaries) => summaries[j] = context_summary(state, j),
            Cache::Equal | Cache::Ptv => {}
        }
    }

    fn next(&self, state: &AllocationState) -> Result<PolicyDecision> {
        match self {
            Cache::Equal => Ok(equal_next(state)),
            Cache::Ptv => ptv_next(state),
            Cache::EqualOcba(shares) => {
                let m = state.contexts() as f64;
                Ok(max_deficit(state, |i, j| shares[j][i] / m))
            }
            Cache::Crs(summaries) => Ok(crs_decide(summaries, state.total())),
        }
    }
}

/// Checks shared by sequential runs.
pub fn validate_run(spec: &ProblemSpec, n0: u64, delta_n: u64, budget: u64, checkpoints: &[u64]) -> Result<()> {
    let init = n0 * (spec.k() * spec.m()) as u64;
    if delta_n == 0 {
        return Err(CrsError::config("delta_n", "must be at least 1"));
    }
    if budget < init {
        return Err(CrsError::config(
            "budget",
            format!("{budget} is below the initialization cost n0·k·m = {init}"),
        ));
    }
    validate_checkpoints(checkpoints, init, budget)
}

pub(crate) fn validate_checkpoints(checkpoints: &[u64], low: u64, budget: u64) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(CrsError::config("checkpoints", "at least one checkpoint is required"));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CrsError::config("checkpoints", "must be strictly increasing"));
    }
    if checkpoints[0] < low || *checkpoints.last().unwrap() > budget {
        return Err(CrsError::config(
            "checkpoints",
            format!("must lie in [{low}, {budget}]"),
        ));
    }
    Ok(())
}

/// One macro-replication: `n0` samples per cell, then batches of `delta_n`
/// (the last batch is cut so the total ends exactly at `budget`).
pub fn run_policy(
    spec: &ProblemSpec,
    policy: Policy,
    n0: u64,
    delta_n: u64,
    budget: u64,
    checkpoints: &[u64],
    seed: u64,
) -> Result<MacroRepTrace> {
    validate_run(spec, n0, delta_n, budget, checkpoints)?;
    let (k, m) = (spec.k(), spec.m());
    let mut streams = CellStreams::new(seed, SEQUENTIAL_EPOCH, k * m);
    let mut state = AllocationState::for_problem(spec);
    let mut draw = |state: &mut AllocationState, i: usize, j: usize, count: u64| -> Result<()> {
        let rng = streams.cell(i * m + j);
        for _ in 0..count {
            let y = spec.sample(i, j, rng)?;
            state.update(i, j, y);
        }
        Ok(())
    };

    for j in 0..m {
        for i in 0..k {
            draw(&mut state, i, j, n0)?;
        }
    }
    let mut trace = MacroRepTrace::new(seed);
    let mut pending = checkpoints.iter().copied().peekable();
    let mut record = |state: &AllocationState, trace: &mut MacroRepTrace| {
        while let Some(&cp) = pending.peek() {
            if state.total() < cp {
                break;
            }
            trace.record(cp, state);
            pending.next();
        }
    };
    record(&state, &mut trace);

    let mut cache = if state.total() < budget {
        Some(Cache::new(policy, &state)?)
    } else {
        None
    };
    while state.total() < budget {
        let cache = cache.as_mut().expect("built when budget remains");
        let d = cache.next(&state)?;
        let count = delta_n.min(budget - state.total());
        draw(&mut state, d.design, d.context, count)?;
        cache.refresh(&state, d.context);
        record(&state, &mut trace);
    }
    trace.finish(&state);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DistributionModel;

    /// State with given per-cell samples, laid out `cells[i][j]`.
    fn state_from(cells: &[Vec<Vec<f64>>]) -> AllocationState {
        let k = cells.len();
        let m = cells[0].len();
        let mut s = AllocationState::new(k, m);
        for (i, row) in cells.iter().enumerate() {
            for (j, values) in row.iter().enumerate() {
                for &y in values {
                    s.update(i, j, y);
                }
            }
        }
        s
    }

    /// `count` values with the given mean and unbiased variance 1.
    fn unit_sample(mean: f64, count: usize) -> Vec<f64> {
        // ±c around the mean with c² = (count−1)/count gives variance 1.
        assert!(count.is_multiple_of(2));
        let c = ((count as f64 - 1.0) / count as f64).sqrt();
        (0..count).map(|l| if l % 2 == 0 { mean - c } else { mean + c }).collect()
    }

    #[test]
    fn crs_statistics_two_designs() {
        let s = state_from(&[vec![unit_sample(0.0, 10)], vec![unit_sample(1.0, 10)]]);
        let st = crs_statistics(&s).unwrap();
        assert!((st.u_best[0] - 0.25).abs() < 1e-12);
        assert!((st.u_non[0] - 0.25).abs() < 1e-12);
        assert!((st.v.get(1, 0).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(*st.v.get(0, 0), None);
        assert_eq!(st.best, vec![0]);
    }

    #[test]
    fn crs_statistics_are_scale_invariant() {
        let a = state_from(&[vec![unit_sample(0.0, 10)], vec![unit_sample(1.0, 14)]]);
        let b = state_from(&[vec![unit_sample(0.0, 100)], vec![unit_sample(1.0, 140)]]);
        let (sa, sb) = (crs_statistics(&a).unwrap(), crs_statistics(&b).unwrap());
        assert!((sa.u_best[0] - sb.u_best[0]).abs() < 1e-12);
        assert!((sa.u_non[0] - sb.u_non[0]).abs() < 1e-12);
        assert!((sa.v.get(1, 0).unwrap() - sb.v.get(1, 0).unwrap()).abs() < 1e-12);
        assert_eq!(crs_next(&a).unwrap().design, crs_next(&b).unwrap().design);
    }

    #[test]
    fn crs_samples_starved_best() {
        let s = state_from(&[vec![unit_sample(0.0, 2)], vec![unit_sample(1.0, 20)]]);
        let d = crs_next(&s).unwrap();
        assert_eq!((d.design, d.context), (0, 0));
        assert!(d.diagnostics.unwrap().chose_best);
    }

    #[test]
    fn crs_picks_context_with_smaller_gap() {
        let s = state_from(&[
            vec![unit_sample(0.0, 10), unit_sample(0.0, 10)],
            vec![unit_sample(1.0, 10), unit_sample(10.0, 10)],
        ]);
        assert_eq!(crs_next(&s).unwrap().context, 0);
        let swapped = state_from(&[
            vec![unit_sample(0.0, 10), unit_sample(0.0, 10)],
            vec![unit_sample(10.0, 10), unit_sample(1.0, 10)],
        ]);
        assert_eq!(crs_next(&swapped).unwrap().context, 1);
    }

    #[test]
    fn crs_tie_goes_to_first_context() {
        let s = state_from(&[
            vec![unit_sample(0.0, 10), unit_sample(0.0, 10)],
            vec![unit_sample(1.0, 10), unit_sample(1.0, 10)],
        ]);
        assert_eq!(crs_next(&s).unwrap().context, 0);
    }

    #[test]
    fn insufficient_initialization_is_reported() {
        let s = state_from(&[vec![vec![1.0]], vec![vec![2.0, 3.0]]]);
        for p in [Policy::Ptv, Policy::EqualOcba, Policy::Crs] {
            assert!(matches!(p.next(&s), Err(CrsError::InsufficientInitialization { .. })));
        }
    }

    #[test]
    fn equal_picks_least_sampled() {
        let s = state_from(&[vec![vec![1.0], vec![1.0]], vec![vec![1.0], vec![]]]);
        let d = equal_next(&s);
        assert_eq!((d.design, d.context), (1, 1));
        let s = state_from(&[vec![vec![1.0], vec![1.0]], vec![vec![1.0], vec![1.0]]]);
        let d = equal_next(&s);
        assert_eq!((d.design, d.context), (0, 0));

        let mut s = AllocationState::new(3, 2);
        for _ in 0..3 * 2 * 4 {
            let d = equal_next(&s);
            s.update(d.design, d.context, 0.0);
        }
        assert!(s.counts().values().iter().all(|&c| c == 4));
    }

    #[test]
    fn ptv_follows_variance() {
        // equal variances: same as equal allocation
        let s = state_from(&[
            vec![unit_sample(0.0, 4), unit_sample(0.0, 2)],
            vec![unit_sample(1.0, 4), unit_sample(1.0, 4)],
        ]);
        let d = ptv_next(&s).unwrap();
        assert_eq!((d.design, d.context), (0, 1));

        let wide: Vec<f64> = unit_sample(1.0, 4).iter().map(|y| 2.0 * y - 1.0).collect();
        let s = state_from(&[
            vec![unit_sample(0.0, 4), unit_sample(0.0, 4)],
            vec![unit_sample(1.0, 4), wide],
        ]);
        let d = ptv_next(&s).unwrap();
        assert_eq!((d.design, d.context), (1, 1));
    }

    #[test]
    fn equal_ocba_targets() {
        let s = state_from(&[
            vec![unit_sample(0.0, 10)],
            vec![unit_sample(1.0, 10)],
            vec![unit_sample(1.0, 10)],
        ]);
        let t = ocba_shares(&s, 0);
        assert!((t[1] - t[2]).abs() < 1e-15);
        assert!((t[0] / t[1] - 2f64.sqrt()).abs() < 1e-12);

        let s = state_from(&[vec![unit_sample(0.0, 10)], vec![unit_sample(3.0, 10)]]);
        let t = ocba_shares(&s, 0);
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_ocba_clips_zero_gap() {
        let s = state_from(&[
            vec![unit_sample(0.0, 10)],
            vec![unit_sample(0.0, 10)],
            vec![unit_sample(2.0, 10)],
        ]);
        let t = ocba_shares(&s, 0);
        assert!(t.iter().all(|x| x.is_finite() && *x > 0.0));
        assert_eq!(t[1], t[2]);
    }

    #[test]
    fn equal_ocba_splits_identical_contexts_evenly() {
        let cell = |mean| unit_sample(mean, 10);
        let s = state_from(&[vec![cell(0.0), cell(0.0)], vec![cell(1.0), cell(1.0)], vec![cell(2.0), cell(2.0)]]);
        assert_eq!(ocba_shares(&s, 0), ocba_shares(&s, 1));
    }

    fn normal_spec() -> ProblemSpec {
        let n = |mu| DistributionModel::normal(mu, 1.0).unwrap();
        ProblemSpec::analytic(Grid::from_rows(vec![vec![n(0.0), n(0.5)], vec![n(0.4), n(0.0)], vec![n(1.0), n(0.3)]]).unwrap())
            .unwrap()
    }

    #[test]
    fn run_with_no_free_budget_records_initialization() {
        let spec = normal_spec();
        let t = run_policy(&spec, Policy::Crs, 5, 1, 30, &[30], 1).unwrap();
        assert_eq!(t.checkpoints, vec![30]);
        assert!(t.final_counts.values().iter().all(|&c| c == 5));
    }

    #[test]
    fn equal_run_doubles_counts() {
        let spec = normal_spec();
        let t = run_policy(&spec, Policy::Equal, 4, 1, 48, &[24, 48], 1).unwrap();
        assert!(t.final_counts.values().iter().all(|&c| c == 8));
    }

    #[test]
    fn batches_end_exactly_at_budget() {
        let spec = normal_spec();
        for p in Policy::ALL {
            let t = run_policy(&spec, p, 3, 7, 100, &[18, 50, 100], 9).unwrap();
            assert_eq!(t.final_counts.values().iter().sum::<u64>(), 100);
            assert_eq!(t.selected.len(), 3);
        }
    }

    #[test]
    fn cached_run_matches_uncached_decisions() {
        let spec = normal_spec();
        for p in Policy::ALL {
            let t = run_policy(&spec, p, 3, 1, 400, &[400], 4).unwrap();
            // replay with the pure decision function
            let mut streams = CellStreams::new(4, SEQUENTIAL_EPOCH, 6);
            let mut s = AllocationState::for_problem(&spec);
            for j in 0..2 {
                for i in 0..3 {
                    for _ in 0..3 {
                        let y = spec.sample(i, j, streams.cell(i * 2 + j)).unwrap();
                        s.update(i, j, y);
                    }
                }
            }
            while s.total() < 400 {
                let d = p.next(&s).unwrap();
                let y = spec.sample(d.design, d.context, streams.cell(d.design * 2 + d.context)).unwrap();
                s.update(d.design, d.context, y);
            }
            assert_eq!(s.counts(), &t.final_counts, "{p}");
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let spec = normal_spec();
        let a = run_policy(&spec, Policy::Crs, 5, 2, 500, &[100, 500], 77).unwrap();
        let b = run_policy(&spec, Policy::Crs, 5, 2, 500, &[100, 500], 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_below_initialization_is_config_error() {
        let spec = normal_spec();
        let e = run_policy(&spec, Policy::Equal, 5, 1, 29, &[29], 0).unwrap_err();
        assert!(matches!(e, CrsError::Config { ref field, .. } if field == "budget"));
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("ocba".parse::<Policy>().is_err());
    }
}
