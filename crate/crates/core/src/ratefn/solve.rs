//! Numeric solution of the rate-optimal allocation.
//!
//! `G` is positively homogeneous of degree one in `(α_b, α_c)`, so the
//! optimum can be found without the simplex constraint: fix the common pair
//! rate at 1, express every challenger weight as a function of its context's
//! best-design weight `a`, pick `a` so the context's balance condition holds,
//! and normalize at the end. Contexts decouple and each needs only a
//! one-dimensional root search.

use super::{crossing_gamma, kkt_residual, pair_rate, rate_i};
use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::model::{AllocationFractions, DistributionModel, ProblemSpec};

const MAX_ITERATIONS: usize = 100_000;
const BISECTION_STEPS: usize = 200;

/// Rate-optimal allocation fractions for an analytic problem.
///
/// Fails with [`CrsError::NonConvergence`] if the final residual is not
/// below `tolerance`.
pub fn solve_optimal_fractions(spec: &ProblemSpec, tolerance: f64) -> Result<AllocationFractions> {
    if !spec.is_analytic() {
        return Err(CrsError::Domain(
            "optimal fractions need analytic models in every cell".into(),
        ));
    }
    if !(tolerance > 0.0) {
        return Err(CrsError::Argument("tolerance must be positive".into()));
    }
    let truth = spec.require_ground_truth()?;
    let mut budget = Budget::default();
    let mut weights = Grid::filled(spec.k(), spec.m(), 0.0);

    for j in 0..spec.m() {
        let b = truth.best(j);
        let best = spec.model(b, j);
        let challengers: Vec<&DistributionModel> = (0..spec.k())
            .filter(|&i| i != b)
            .map(|i| spec.model(i, j))
            .collect();
        let (a, ws) = solve_context(best, &challengers, &mut budget)?;
        *weights.get_mut(b, j) = a;
        for (i, w) in (0..spec.k()).filter(|&i| i != b).zip(ws) {
            *weights.get_mut(i, j) = w;
        }
    }

    let fractions = AllocationFractions::normalized(weights)?;
    let residual = kkt_residual(spec, &fractions)?.max_abs();
    if residual < tolerance {
        Ok(fractions)
    } else {
        Err(CrsError::NonConvergence {
            iterations: budget.used,
            residual,
        })
    }
}

#[derive(Default)]
struct Budget {
    used: usize,
}

impl Budget {
    fn tick(&mut self, residual: f64) -> Result<()> {
        self.used += 1;
        if self.used > MAX_ITERATIONS {
            Err(CrsError::NonConvergence {
                iterations: self.used,
                residual,
            })
        } else {
            Ok(())
        }
    }
}

/// Best-design weight and challenger weights giving every challenger unit
/// pair rate and a balanced context.
fn solve_context(
    best: &DistributionModel,
    challengers: &[&DistributionModel],
    budget: &mut Budget,
) -> Result<(f64, Vec<f64>)> {
    let best_mean = best.mean().expect("analytic");
    // As a challenger's weight grows without bound its pair rate tends to
    // a·I_b(y_i), so unit rate is reachable only above 1/I_b(y_i).
    let mut a_min: f64 = 0.0;
    for c in challengers {
        let limit = rate_i(best, c.mean().expect("analytic"))?;
        if !(limit > 0.0) {
            return Err(CrsError::GroundTruthViolation {
                context: 0,
                message: format!("challenger mean equals best mean {best_mean}"),
            });
        }
        a_min = a_min.max(1.0 / limit);
    }

    let imbalance = |a: f64, budget: &mut Budget| -> Result<(f64, Vec<f64>)> {
        let mut ws = Vec::with_capacity(challengers.len());
        let mut sum = 0.0;
        for c in challengers {
            let w = unit_rate_weight(best, c, a, budget)?;
            sum += balance_term(best, c, a, w)?;
            ws.push(w);
        }
        Ok((sum - 1.0, ws))
    };

    // The balance sum blows up as a → a_min and vanishes as a → ∞.
    let mut lo = a_min;
    let mut hi = 2.0 * a_min;
    loop {
        let (r, _) = imbalance(hi, budget)?;
        budget.tick(r)?;
        if r < 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    let mut last = f64::NAN;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (r, _) = imbalance(mid, budget)?;
        budget.tick(r)?;
        last = r;
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let (r, ws) = imbalance(a, budget)?;
    if !r.is_finite() {
        return Err(CrsError::NonConvergence {
            iterations: budget.used,
            residual: last,
        });
    }
    Ok((a, ws))
}

/// Challenger weight `w` with `G(a, w) = 1`.
fn unit_rate_weight(
    best: &DistributionModel,
    challenger: &DistributionModel,
    a: f64,
    budget: &mut Budget,
) -> Result<f64> {
    if let (
        &DistributionModel::Normal {
            mean: yb,
            variance: vb,
        },
        &DistributionModel::Normal {
            mean: yc,
            variance: vc,
        },
    ) = (best, challenger)
    {
        // δ² / (2(σ_b²/a + σ_c²/w)) = 1
        let slack = (yc - yb).powi(2) / 2.0 - vb / a;
        return Ok(if slack > 0.0 { vc / slack } else { f64::INFINITY });
    }
    let rate = |w: f64| -> Result<f64> { Ok(pair_rate(best, challenger, a, w)?.value) };
    let mut lo = 1.0;
    while rate(lo)? > 1.0 {
        budget.tick(lo)?;
        lo *= 0.5;
    }
    let mut hi = lo.max(1.0);
    while rate(hi)? <= 1.0 {
        budget.tick(hi)?;
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(f64::INFINITY);
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rate(mid)? > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `I_b(γ)/I_c(γ)` at the pair's crossing point; equals
/// `σ_b² w² / (σ_c² a²)` for normal cells.
fn balance_term(best: &DistributionModel, challenger: &DistributionModel, a: f64, w: f64) -> Result<f64> {
    if !w.is_finite() {
        return Ok(f64::INFINITY);
    }
    if let (DistributionModel::Normal { variance: vb, .. }, DistributionModel::Normal { variance: vc, .. }) =
        (best, challenger)
    {
        return Ok(vb * w * w / (vc * a * a));
    }
    let gamma = crossing_gamma(best, challenger, a, w)?;
    Ok(rate_i(best, gamma)? / rate_i(challenger, gamma)?)
}
