use serde::Serialize;

use super::{check_shape, crossing_gamma, pair_rate, rate_i};
use crate::error::{CrsError, Result};
use crate::model::{AllocationFractions, DistributionModel, Family, ProblemSpec};

/// Left-minus-right values of the stationarity conditions of `max R(α)`.
///
/// All entries are zero at the rate-optimal allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktResidual {
    /// Best-versus-rest balance, one entry per context.
    pub balance: Vec<f64>,
    /// Differences of the equalized pair quantity between challengers of the
    /// same context.
    pub within_context: Vec<f64>,
    /// Differences of the equalized pair quantity between challengers of
    /// different contexts.
    pub across_context: Vec<f64>,
}

impl KktResidual {
    pub fn max_abs(&self) -> f64 {
        self.balance
            .iter()
            .chain(&self.within_context)
            .chain(&self.across_context)
            .fold(0.0, |acc, r| acc.max(r.abs()))
    }
}

fn all_normal(spec: &ProblemSpec) -> bool {
    spec.models()
        .values()
        .iter()
        .all(|m| m.family() == Some(Family::Normal))
}

/// Quantity equalized across challengers: `V = δ² / (σ_b²/α_b + σ_i²/α_i)`
/// (twice the pair rate) when every cell is normal, the pair rate `G`
/// otherwise.
pub fn pair_equalization_value(
    spec: &ProblemSpec,
    best: &DistributionModel,
    challenger: &DistributionModel,
    alpha_best: f64,
    alpha_challenger: f64,
) -> Result<f64> {
    let g = pair_rate(best, challenger, alpha_best, alpha_challenger)?.value;
    Ok(if all_normal(spec) { 2.0 * g } else { g })
}

/// Residuals of the optimality conditions at `fractions`.
///
/// For normal contexts the balance entry is
/// `α_b²/σ_b² − Σ_{i≠b} α_i²/σ_i²`; for any other family it is
/// `Σ_{i≠b} I_b(γ_i)/I_i(γ_i) − 1`, which the normal form reduces to after
/// scaling.
pub fn kkt_residual(spec: &ProblemSpec, fractions: &AllocationFractions) -> Result<KktResidual> {
    check_shape(spec, fractions)?;
    let truth = spec.require_ground_truth()?;
    let normal = all_normal(spec);
    let mut balance = Vec::with_capacity(spec.m());
    // (context, equalization value) for every challenger
    let mut values: Vec<(usize, f64)> = Vec::new();

    for j in 0..spec.m() {
        let b = truth.best(j);
        let ab = fractions.get(b, j);
        let best_model = spec.model(b, j);
        let context_normal = spec
            .models()
            .column(j)
            .all(|m| m.family() == Some(Family::Normal));
        let mut best_side = 0.0;
        let mut rest_side = 0.0;
        if context_normal {
            best_side = ab * ab / best_model.variance().expect("analytic");
        }
        for i in (0..spec.k()).filter(|&i| i != b) {
            let ai = fractions.get(i, j);
            if !(ab > 0.0 && ai > 0.0) {
                return Err(CrsError::DegenerateAllocation(format!(
                    "cell (design {i}, context {j}) or its best design has zero budget"
                )));
            }
            let model = spec.model(i, j);
            if context_normal {
                rest_side += ai * ai / model.variance().expect("analytic");
            } else {
                let gamma = crossing_gamma(best_model, model, ab, ai)?;
                rest_side += rate_i(best_model, gamma)? / rate_i(model, gamma)?;
            }
            let g = pair_rate(best_model, model, ab, ai)?.value;
            values.push((j, if normal { 2.0 * g } else { g }));
        }
        balance.push(if context_normal {
            best_side - rest_side
        } else {
            rest_side - 1.0
        });
    }

    let mut within_context = Vec::new();
    let mut across_context = Vec::new();
    for (a, &(ja, va)) in values.iter().enumerate() {
        for &(jb, vb) in &values[a + 1..] {
            if ja == jb {
                within_context.push(va - vb);
            } else {
                across_context.push(va - vb);
            }
        }
    }
    Ok(KktResidual {
        balance,
        within_context,
        across_context,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal(mean: f64, variance: f64) -> DistributionModel {
        DistributionModel::normal(mean, variance).unwrap()
    }

    #[test]
    fn two_design_symmetry_balances() {
        let spec = ProblemSpec::analytic(
            Grid::from_rows(vec![vec![normal(0.0, 2.0)], vec![normal(1.0, 2.0)]]).unwrap(),
        )
        .unwrap();
        let r = kkt_residual(&spec, &AllocationFractions::uniform(2, 1)).unwrap();
        assert_eq!(r.balance, vec![0.0]);
        assert!(r.within_context.is_empty());
        assert!(r.across_context.is_empty());
    }

    #[test]
    fn generic_point_is_not_stationary() {
        let spec = ProblemSpec::analytic(
            Grid::from_rows(vec![
                vec![normal(0.0, 1.0), normal(2.0, 1.0)],
                vec![normal(1.0, 2.0), normal(0.0, 1.0)],
                vec![normal(2.0, 1.0), normal(0.5, 3.0)],
            ])
            .unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = Grid::from_fn(3, 2, |_, _| rng.random_range(0.05..1.0));
            let f = AllocationFractions::normalized(w).unwrap();
            let r = kkt_residual(&spec, &f).unwrap();
            assert_eq!(r.balance.len(), 2);
            assert_eq!(r.within_context.len(), 2);
            assert_eq!(r.across_context.len(), 4);
            assert!(r.balance.iter().chain(&r.within_context).chain(&r.across_context).all(|x| x.is_finite()));
            assert!(r.max_abs() > 0.0);
        }
    }

    #[test]
    fn zero_fraction_is_degenerate() {
        let spec = ProblemSpec::analytic(
            Grid::from_rows(vec![vec![normal(0.0, 1.0)], vec![normal(1.0, 1.0)]]).unwrap(),
        )
        .unwrap();
        let f = AllocationFractions::new(Grid::from_rows(vec![vec![1.0], vec![0.0]]).unwrap()).unwrap();
        assert!(matches!(
            kkt_residual(&spec, &f),
            Err(CrsError::DegenerateAllocation(_))
        ));
    }

    #[test]
    fn exponential_balance_uses_rate_ratio() {
        let e = |r: f64| DistributionModel::exponential(r).unwrap();
        let spec = ProblemSpec::analytic(Grid::from_rows(vec![vec![e(4.0)], vec![e(2.0)]]).unwrap()).unwrap();
        let f = AllocationFractions::uniform(2, 1);
        let r = kkt_residual(&spec, &f).unwrap();
        let g = crossing_gamma(&e(4.0), &e(2.0), 0.5, 0.5).unwrap();
        let expect = rate_i(&e(4.0), g).unwrap() / rate_i(&e(2.0), g).unwrap() - 1.0;
        assert!((r.balance[0] - expect).abs() < 1e-15);
    }
}
