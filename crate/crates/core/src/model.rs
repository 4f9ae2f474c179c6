//! Problem definition and sampling state shared by every other module.
//!
//! A problem is a `k × m` grid of stochastic sources: design `i` evaluated
//! under context `j`. Smaller means are better; the best design of a context
//! is the argmin of its column of true means.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::grid::Grid;

const PROBABILITY_TOL: f64 = 1e-12;

/// The finite set of contexts and the probability of observing each.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    contexts: Vec<Vec<f64>>,
    probabilities: Vec<f64>,
}

impl ContextSet {
    pub fn new(contexts: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(CrsError::Argument("at least one context is required".into()));
        }
        let dim = contexts[0].len();
        if contexts.iter().any(|c| c.len() != dim) {
            return Err(CrsError::Argument(
                "all context vectors must have the same dimension".into(),
            ));
        }
        validate_probabilities(&probabilities, contexts.len())?;
        Ok(ContextSet {
            contexts,
            probabilities,
        })
    }

    /// Contexts with equal probability `1/m`.
    pub fn uniform(contexts: Vec<Vec<f64>>) -> Result<Self> {
        let m = contexts.len();
        ContextSet::new(contexts, vec![1.0 / m as f64; m])
    }

    /// `m` anonymous one-dimensional contexts `0, 1, ..., m-1`, equally likely.
    pub fn indexed(m: usize) -> Result<Self> {
        ContextSet::uniform((0..m).map(|j| vec![j as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.contexts[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn with_probabilities(mut self, probabilities: Vec<f64>) -> Result<Self> {
        validate_probabilities(&probabilities, self.contexts.len())?;
        self.probabilities = probabilities;
        Ok(self)
    }
}

pub(crate) fn validate_probabilities(p: &[f64], m: usize) -> Result<()> {
    if p.len() != m {
        return Err(CrsError::Argument(format!(
            "expected {m} context probabilities, got {}",
            p.len()
        )));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(CrsError::Argument(
            "context probabilities must be finite and non-negative".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_TOL {
        return Err(CrsError::Argument(format!(
            "context probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// The `k ≥ 2` alternatives being ranked.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    designs: Vec<Vec<f64>>,
}

impl DesignSet {
    pub fn new(designs: Vec<Vec<f64>>) -> Result<Self> {
        if designs.len() < 2 {
            return Err(CrsError::Argument(format!(
                "a selection problem needs at least two designs, got {}",
                designs.len()
            )));
        }
        Ok(DesignSet { designs })
    }

    pub fn indexed(k: usize) -> Result<Self> {
        DesignSet::new((0..k).map(|i| vec![i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.designs
    }
}

/// A simulator producing one sample per call from its own random stream.
pub trait CellSimulator: Send + Sync {
    fn simulate(&self, rng: &mut dyn RngCore) -> f64;
}

impl<F> CellSimulator for F
where
    F: Fn(&mut dyn RngCore) -> f64 + Send + Sync,
{
    fn simulate(&self, rng: &mut dyn RngCore) -> f64 {
        self(rng)
    }
}

/// Shared handle to an opaque simulator.
#[derive(Clone)]
pub struct BlackBox(pub Arc<dyn CellSimulator>);

impl BlackBox {
    pub fn new(sim: impl CellSimulator + 'static) -> Self {
        BlackBox(Arc::new(sim))
    }
}

impl fmt::Debug for BlackBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BlackBox(..)")
    }
}

/// Output distribution of a single (design, context) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionModel {
    Normal { mean: f64, variance: f64 },
    Exponential { rate: f64 },
    Bernoulli { success_prob: f64 },
    #[serde(skip)]
    BlackBox(BlackBox),
}

/// Family tag of an analytic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Exponential,
    Bernoulli,
    /// Pair of models from different families, handled numerically.
    Mixed,
}

impl DistributionModel {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        DistributionModel::Normal { mean, variance }.validated()
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        DistributionModel::Exponential { rate }.validated()
    }

    pub fn bernoulli(success_prob: f64) -> Result<Self> {
        DistributionModel::Bernoulli { success_prob }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match &self {
            DistributionModel::Normal { mean, variance } => {
                mean.is_finite() && variance.is_finite() && *variance > 0.0
            }
            DistributionModel::Exponential { rate } => rate.is_finite() && *rate > 0.0,
            DistributionModel::Bernoulli { success_prob } => {
                *success_prob > 0.0 && *success_prob < 1.0
            }
            DistributionModel::BlackBox(_) => true,
        };
        if ok {
            Ok(self)
        } else {
            Err(CrsError::Argument(format!("invalid model parameters: {self:?}")))
        }
    }

    pub fn family(&self) -> Option<Family> {
        match self {
            DistributionModel::Normal { .. } => Some(Family::Normal),
            DistributionModel::Exponential { .. } => Some(Family::Exponential),
            DistributionModel::Bernoulli { .. } => Some(Family::Bernoulli),
            DistributionModel::BlackBox(_) => None,
        }
    }

    /// True mean, if the model is analytic.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            DistributionModel::Normal { mean, .. } => Some(mean),
            DistributionModel::Exponential { rate } => Some(1.0 / rate),
            DistributionModel::Bernoulli { success_prob } => Some(success_prob),
            DistributionModel::BlackBox(_) => None,
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match *self {
            DistributionModel::Normal { variance, .. } => Some(variance),
            DistributionModel::Exponential { rate } => Some(1.0 / (rate * rate)),
            DistributionModel::Bernoulli { success_prob: q } => Some(q * (1.0 - q)),
            DistributionModel::BlackBox(_) => None,
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, DistributionModel::BlackBox(_))
    }

    /// Draws one observation.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionModel::Normal { mean, variance } => Normal::new(*mean, variance.sqrt())
                .expect("validated normal parameters")
                .sample(rng),
            DistributionModel::Exponential { rate } => {
                Exp::new(*rate).expect("validated rate").sample(rng)
            }
            DistributionModel::Bernoulli { success_prob } => {
                if rng.random_bool(*success_prob) {
                    1.0
                } else {
                    0.0
                }
            }
            DistributionModel::BlackBox(sim) => {
                let mut rng = rng;
                sim.0.simulate(&mut rng)
            }
        }
    }
}

/// True means and the unique best design of every context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    true_means: Grid<f64>,
    best_design: Vec<usize>,
}

impl GroundTruth {
    /// Builds ground truth from a mean table, rejecting any context whose
    /// minimum is not unique.
    pub fn from_means(true_means: Grid<f64>) -> Result<Self> {
        let mut best_design = Vec::with_capacity(true_means.contexts());
        for j in 0..true_means.contexts() {
            let best = argmin(true_means.column(j).copied());
            let best_value = *true_means.get(best, j);
            for i in 0..true_means.designs() {
                let v = *true_means.get(i, j);
                if !v.is_finite() {
                    return Err(CrsError::GroundTruthViolation {
                        context: j,
                        message: format!("design {i} has non-finite mean"),
                    });
                }
                if i != best && v <= best_value {
                    return Err(CrsError::GroundTruthViolation {
                        context: j,
                        message: format!(
                            "designs {best} and {i} tie for the minimum mean {best_value}"
                        ),
                    });
                }
            }
            best_design.push(best);
        }
        Ok(GroundTruth {
            true_means,
            best_design,
        })
    }

    pub fn true_means(&self) -> &Grid<f64> {
        &self.true_means
    }

    pub fn best_design(&self) -> &[usize] {
        &self.best_design
    }

    pub fn best(&self, context: usize) -> usize {
        self.best_design[context]
    }

    /// Smallest gap between a context's best mean and any other design.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for j in 0..self.true_means.contexts() {
            let b = *self.true_means.get(self.best_design[j], j);
            for i in 0..self.true_means.designs() {
                if i != self.best_design[j] {
                    gap = gap.min(self.true_means.get(i, j) - b);
                }
            }
        }
        gap
    }
}

/// Index of the smallest value; ties resolve to the lowest index.
pub fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v < best_value || i == 0 {
            best = i;
            best_value = v;
        }
    }
    best
}

/// A fully populated selection problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    contexts: ContextSet,
    designs: DesignSet,
    models: Grid<DistributionModel>,
    ground_truth: Option<GroundTruth>,
}

impl ProblemSpec {
    /// Binds a model grid to its context and design sets. Analytic grids get
    /// their ground truth computed immediately.
    pub fn new(
        contexts: ContextSet,
        designs: DesignSet,
        models: Grid<DistributionModel>,
    ) -> Result<Self> {
        if models.designs() != designs.len() || models.contexts() != contexts.len() {
            return Err(CrsError::Argument(format!(
                "model grid is {}x{}, expected {}x{}",
                models.designs(),
                models.contexts(),
                designs.len(),
                contexts.len()
            )));
        }
        let models = Grid::from_rows(
            models
                .to_rows()
                .into_iter()
                .map(|row| row.into_iter().map(|m| m.validated()).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
        )?;
        let mut spec = ProblemSpec {
            contexts,
            designs,
            models,
            ground_truth: None,
        };
        if spec.is_analytic() {
            let means = spec.models.map(|m| m.mean().expect("analytic"));
            spec.ground_truth = Some(GroundTruth::from_means(means)?);
        }
        Ok(spec)
    }

    /// Convenience constructor for anonymous analytic tables with uniform
    /// context probabilities.
    pub fn analytic(models: Grid<DistributionModel>) -> Result<Self> {
        let contexts = ContextSet::indexed(models.contexts())?;
        let designs = DesignSet::indexed(models.designs())?;
        ProblemSpec::new(contexts, designs, models)
    }

    pub fn with_ground_truth(mut self, truth: GroundTruth) -> Result<Self> {
        if !truth.true_means().same_shape(&self.models) {
            return Err(CrsError::Argument(
                "ground truth dimensions do not match the problem".into(),
            ));
        }
        self.ground_truth = Some(truth);
        Ok(self)
    }

    pub fn with_context_probabilities(mut self, p: Vec<f64>) -> Result<Self> {
        self.contexts = self.contexts.with_probabilities(p)?;
        Ok(self)
    }

    /// Number of designs `k`.
    pub fn k(&self) -> usize {
        self.designs.len()
    }

    /// Number of contexts `m`.
    pub fn m(&self) -> usize {
        self.contexts.len()
    }

    pub fn contexts(&self) -> &ContextSet {
        &self.contexts
    }

    pub fn designs(&self) -> &DesignSet {
        &self.designs
    }

    pub fn models(&self) -> &Grid<DistributionModel> {
        &self.models
    }

    pub fn model(&self, design: usize, context: usize) -> &DistributionModel {
        self.models.get(design, context)
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn require_ground_truth(&self) -> Result<&GroundTruth> {
        self.ground_truth.as_ref().ok_or_else(|| {
            CrsError::Argument("problem has no ground truth; run the simulation oracle".into())
        })
    }

    pub fn is_analytic(&self) -> bool {
        self.models.values().iter().all(DistributionModel::is_analytic)
    }

    /// One independent draw from cell `(design, context)`.
    pub fn sample<R: Rng + ?Sized>(&self, design: usize, context: usize, rng: &mut R) -> Result<f64> {
        self.models.check_index(design, context)?;
        Ok(self.models.get(design, context).draw(rng))
    }
}

/// Running per-cell statistics; the whole memory of a sequential policy.
///
/// Means and variances are accumulated with Welford's update, so the sum of
/// squared deviations never suffers the cancellation of a raw sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    counts: Grid<u64>,
    means: Grid<f64>,
    sq_dev: Grid<f64>,
    total: u64,
}

impl AllocationState {
    pub fn new(designs: usize, contexts: usize) -> Self {
        AllocationState {
            counts: Grid::filled(designs, contexts, 0),
            means: Grid::filled(designs, contexts, 0.0),
            sq_dev: Grid::filled(designs, contexts, 0.0),
            total: 0,
        }
    }

    pub fn for_problem(spec: &ProblemSpec) -> Self {
        AllocationState::new(spec.k(), spec.m())
    }

    pub fn designs(&self) -> usize {
        self.counts.designs()
    }

    pub fn contexts(&self) -> usize {
        self.counts.contexts()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &Grid<u64> {
        &self.counts
    }

    pub fn count(&self, design: usize, context: usize) -> u64 {
        *self.counts.get(design, context)
    }

    /// Records one observation for a cell. Indices are the caller's
    /// responsibility; out-of-range indices panic.
    pub fn update(&mut self, design: usize, context: usize, value: f64) {
        let n = self.counts.get_mut(design, context);
        *n += 1;
        let n = *n as f64;
        let mean = self.means.get_mut(design, context);
        let delta = value - *mean;
        *mean += delta / n;
        let delta2 = value - *mean;
        *self.sq_dev.get_mut(design, context) += delta * delta2;
        self.total += 1;
    }

    pub fn mean(&self, design: usize, context: usize) -> Option<f64> {
        (self.count(design, context) >= 1).then(|| *self.means.get(design, context))
    }

    /// Unbiased sample variance; undefined below two observations.
    pub fn variance(&self, design: usize, context: usize) -> Option<f64> {
        let n = self.count(design, context);
        (n >= 2).then(|| (*self.sq_dev.get(design, context) / (n - 1) as f64).max(0.0))
    }

    /// Design with the smallest sample mean in `context` (lowest index on
    /// ties). Cells without samples never win.
    pub fn estimated_best(&self, context: usize) -> usize {
        argmin((0..self.designs()).map(|i| self.mean(i, context).unwrap_or(f64::INFINITY)))
    }

    pub fn estimated_best_all(&self) -> Vec<usize> {
        (0..self.contexts()).map(|j| self.estimated_best(j)).collect()
    }

    /// Fails unless every cell has a defined sample variance.
    pub fn require_initialized(&self) -> Result<()> {
        for j in 0..self.contexts() {
            for i in 0..self.designs() {
                let count = self.count(i, j);
                if count < 2 {
                    return Err(CrsError::InsufficientInitialization {
                        design: i,
                        context: j,
                        count,
                    });
                }
            }
        }
        Ok(())
    }

    /// Empirical allocation fractions `n_ij / n`.
    pub fn fractions(&self) -> Result<AllocationFractions> {
        if self.total == 0 {
            return Err(CrsError::EmptyState);
        }
        let n = self.total as f64;
        Ok(AllocationFractions {
            alpha: self.counts.map(|&c| c as f64 / n),
        })
    }
}

/// A point on the allocation simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid<f64>", into = "Grid<f64>")]
pub struct AllocationFractions {
    alpha: Grid<f64>,
}

impl AllocationFractions {
    pub const SIMPLEX_TOL: f64 = 1e-12;

    pub fn new(alpha: Grid<f64>) -> Result<Self> {
        if alpha.values().iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(CrsError::Argument(
                "allocation fractions must be finite and non-negative".into(),
            ));
        }
        let total: f64 = alpha.values().iter().sum();
        if (total - 1.0).abs() > Self::SIMPLEX_TOL {
            return Err(CrsError::Argument(format!(
                "allocation fractions sum to {total}, not 1"
            )));
        }
        Ok(AllocationFractions { alpha })
    }

    /// Scales non-negative weights onto the simplex.
    pub fn normalized(weights: Grid<f64>) -> Result<Self> {
        let total: f64 = weights.values().iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(CrsError::DegenerateAllocation(
                "weights must have a positive finite sum".into(),
            ));
        }
        AllocationFractions::new(weights.map(|w| w / total)).or_else(|_| {
            // One more pass absorbs rounding left by the first division.
            let w = weights.map(|w| w / total);
            let s: f64 = w.values().iter().sum();
            AllocationFractions::new(w.map(|x| x / s))
        })
    }

    pub fn uniform(designs: usize, contexts: usize) -> Self {
        let cells = (designs * contexts) as f64;
        AllocationFractions {
            alpha: Grid::filled(designs, contexts, 1.0 / cells),
        }
    }

    pub fn get(&self, design: usize, context: usize) -> f64 {
        *self.alpha.get(design, context)
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.alpha
    }

    pub fn designs(&self) -> usize {
        self.alpha.designs()
    }

    pub fn contexts(&self) -> usize {
        self.alpha.contexts()
    }
}

impl TryFrom<Grid<f64>> for AllocationFractions {
    type Error = CrsError;

    fn try_from(alpha: Grid<f64>) -> Result<Self> {
        AllocationFractions::new(alpha)
    }
}

impl From<AllocationFractions> for Grid<f64> {
    fn from(f: AllocationFractions) -> Self {
        f.alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_assume, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_cell(model: DistributionModel) -> ProblemSpec {
        let other = DistributionModel::normal(10.0, 1.0).unwrap();
        ProblemSpec::analytic(Grid::from_rows(vec![vec![model], vec![other]]).unwrap()).unwrap()
    }

    #[test]
    fn normal_sample_mean_converges() {
        let spec = one_cell(DistributionModel::normal(0.0, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n).map(|_| spec.sample(0, 0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn bernoulli_frequency() {
        let spec = one_cell(DistributionModel::bernoulli(0.3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..10_000).map(|_| spec.sample(0, 0, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&x| x == 0.0 || x == 1.0));
        let freq = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((freq - 0.3).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn exponential_mean() {
        let spec = one_cell(DistributionModel::exponential(2.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..10_000).map(|_| spec.sample(0, 0, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&x| x > 0.0));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn sample_rejects_bad_index() {
        let spec = one_cell(DistributionModel::normal(0.0, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(spec.sample(2, 0, &mut rng), Err(CrsError::Argument(_))));
        assert!(matches!(spec.sample(0, 1, &mut rng), Err(CrsError::Argument(_))));
    }

    #[test]
    fn black_box_draws_through_simulator() {
        let bb = DistributionModel::BlackBox(BlackBox::new(|rng: &mut dyn RngCore| {
            (rng.next_u32() % 2) as f64 + 5.0
        }));
        let spec = one_cell(bb);
        assert!(spec.ground_truth().is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = spec.sample(0, 0, &mut rng).unwrap();
        assert!(x == 5.0 || x == 6.0);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(DistributionModel::normal(0.0, 0.0).is_err());
        assert!(DistributionModel::exponential(-1.0).is_err());
        assert!(DistributionModel::bernoulli(1.0).is_err());
        assert!(DistributionModel::bernoulli(0.0).is_err());
    }

    #[test]
    fn context_probabilities_validated() {
        assert!(ContextSet::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).is_ok());
        assert!(ContextSet::new(vec![vec![0.0], vec![1.0]], vec![0.6, 0.5]).is_err());
        assert!(ContextSet::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        assert!(ContextSet::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(ContextSet::new(vec![], vec![]).is_err());
        assert!(DesignSet::new(vec![vec![0.0]]).is_err());
    }

    #[test]
    fn ground_truth_requires_unique_best() {
        let tie = Grid::from_rows(vec![vec![1.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            GroundTruth::from_means(tie),
            Err(CrsError::GroundTruthViolation { context: 0, .. })
        ));
        let ok = Grid::from_rows(vec![vec![1.0, 0.0], vec![0.5, 3.0]]).unwrap();
        let gt = GroundTruth::from_means(ok).unwrap();
        assert_eq!(gt.best_design(), &[1, 0]);
        assert_eq!(gt.min_gap(), 0.5);
    }

    #[test]
    fn update_single_observation() {
        let mut s = AllocationState::new(2, 1);
        s.update(0, 0, 2.0);
        assert_eq!(s.count(0, 0), 1);
        assert_eq!(s.mean(0, 0), Some(2.0));
        assert_eq!(s.variance(0, 0), None);
        assert_eq!(s.mean(1, 0), None);
        assert_eq!(s.total(), 1);
    }

    #[test]
    fn update_two_observations() {
        let mut s = AllocationState::new(2, 1);
        s.update(0, 0, 2.0);
        s.update(0, 0, 4.0);
        assert_eq!(s.mean(0, 0), Some(3.0));
        assert_eq!(s.variance(0, 0), Some(2.0));
    }

    #[test]
    fn update_three_observations() {
        let mut s = AllocationState::new(1, 1);
        for v in [1.0, 2.0, 3.0] {
            s.update(0, 0, v);
        }
        assert_eq!(s.mean(0, 0), Some(2.0));
        assert_eq!(s.variance(0, 0), Some(1.0));
    }

    #[test]
    fn update_leaves_other_cells_alone() {
        let mut s = AllocationState::new(2, 2);
        s.update(1, 0, 7.0);
        let before = s.clone();
        s.update(0, 1, 3.0);
        for (i, j) in [(0, 0), (1, 0), (1, 1)] {
            assert_eq!(s.count(i, j), before.count(i, j));
            assert_eq!(s.mean(i, j), before.mean(i, j));
        }
    }

    #[test]
    fn fractions_examples() {
        let mut s = AllocationState::new(2, 2);
        assert!(matches!(s.fractions(), Err(CrsError::EmptyState)));
        for i in 0..2 {
            for j in 0..2 {
                for _ in 0..3 {
                    s.update(i, j, 0.0);
                }
            }
        }
        let f = s.fractions().unwrap();
        assert!(f.grid().values().iter().all(|&a| a == 0.25));

        let mut s = AllocationState::new(2, 1);
        for _ in 0..3 {
            s.update(0, 0, 1.0);
        }
        s.update(1, 0, 1.0);
        let f = s.fractions().unwrap();
        assert_eq!(f.get(0, 0), 0.75);
        assert_eq!(f.get(1, 0), 0.25);
    }

    #[test]
    fn fractions_reject_off_simplex() {
        let g = Grid::from_rows(vec![vec![0.5], vec![0.6]]).unwrap();
        assert!(AllocationFractions::new(g).is_err());
        let g = Grid::from_rows(vec![vec![1.5], vec![-0.5]]).unwrap();
        assert!(AllocationFractions::new(g).is_err());
    }

    proptest! {
        #[test]
        fn incremental_moments_match_batch(
            values in prop::collection::vec(-1e3f64..1e3, 2..200),
            offset in -1e6f64..1e6,
        ) {
            let mut s = AllocationState::new(2, 1);
            for v in &values {
                s.update(0, 0, v + offset);
            }
            let n = values.len() as f64;
            let shifted: Vec<f64> = values.iter().map(|v| v + offset).collect();
            let mean = shifted.iter().sum::<f64>() / n;
            let var = shifted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let m = s.mean(0, 0).unwrap();
            let v = s.variance(0, 0).unwrap();
            prop_assert!((m - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            prop_assert!((v - var).abs() <= 1e-9 * var.max(1.0));
            prop_assert!(v >= 0.0);
            prop_assert_eq!(s.total(), values.len() as u64);
        }

        #[test]
        fn fractions_stay_on_simplex(cells in prop::collection::vec(0u64..50, 6)) {
            prop_assume!(cells.iter().sum::<u64>() > 0);
            let mut s = AllocationState::new(3, 2);
            for (idx, &c) in cells.iter().enumerate() {
                for _ in 0..c {
                    s.update(idx / 2, idx % 2, 1.0);
                }
            }
            let f = s.fractions().unwrap();
            prop_assert!(f.grid().values().iter().all(|&a| a >= 0.0));
            let total: f64 = f.grid().values().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
