//! Large-deviations rate functions for the sample-mean comparisons that
//! drive false selection.
//!
//! For a cell with log-moment generating function `Λ`, the rate function is
//! the Legendre transform `I(γ) = sup_θ (θγ − Λ(θ))`. Two cells compared
//! with allocation fractions `α_b, α_c` mis-order at the exponential rate
//!
//! ```text
//! G(α_b, α_c) = α_b I_b(γ) + α_c I_c(γ),   α_b I_b'(γ) + α_c I_c'(γ) = 0
//! ```
//!
//! and the slowest such comparison over all contexts is the common decay rate
//! `R(α)` of every false-selection measure. Normal, exponential and Bernoulli
//! cells have closed forms; any other pairing goes through
//! [`generic_pair_rate`], which solves for the crossing point by bisection.

mod kkt;
mod solve;

pub use kkt::{kkt_residual, pair_equalization_value, KktResidual};
pub use solve::solve_optimal_fractions;

use serde::Serialize;

use crate::error::{CrsError, Result};
use crate::model::{AllocationFractions, DistributionModel, Family, ProblemSpec};

/// Bracket width at which the crossing-point bisection stops.
pub const GAMMA_TOL: f64 = 1e-12;
const MAX_BISECTION_STEPS: usize = 400;

/// Pairwise rate `G` together with the crossing point that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairRate {
    pub value: f64,
    pub gamma: f64,
    pub family: Family,
}

/// Cramér rate function `I(γ)` of a single analytic model.
pub fn rate_i(model: &DistributionModel, gamma: f64) -> Result<f64> {
    check_in_domain(model, gamma)?;
    Ok(match *model {
        DistributionModel::Normal { mean, variance } => (gamma - mean).powi(2) / (2.0 * variance),
        DistributionModel::Exponential { rate } => {
            // x − 1 − ln x, written to stay accurate near x = 1
            let t = rate * gamma - 1.0;
            t - t.ln_1p()
        }
        DistributionModel::Bernoulli { success_prob: q } => {
            xlogy_ratio(gamma, q) + xlogy_ratio(1.0 - gamma, 1.0 - q)
        }
        DistributionModel::BlackBox(_) => unreachable!("rejected by domain check"),
    }
    .max(0.0))
}

/// `I'(γ)`, increasing in `γ` for every supported family.
pub fn rate_i_derivative(model: &DistributionModel, gamma: f64) -> Result<f64> {
    check_in_domain(model, gamma)?;
    Ok(match *model {
        DistributionModel::Normal { mean, variance } => (gamma - mean) / variance,
        DistributionModel::Exponential { rate } => rate - 1.0 / gamma,
        DistributionModel::Bernoulli { success_prob: q } => {
            (gamma / q).ln() - ((1.0 - gamma) / (1.0 - q)).ln()
        }
        DistributionModel::BlackBox(_) => unreachable!("rejected by domain check"),
    })
}

// x ln(x / y) with the 0 ln 0 = 0 convention.
fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

fn check_in_domain(model: &DistributionModel, gamma: f64) -> Result<()> {
    let ok = match model {
        DistributionModel::Normal { .. } => gamma.is_finite(),
        DistributionModel::Exponential { .. } => gamma > 0.0 && gamma.is_finite(),
        DistributionModel::Bernoulli { .. } => gamma > 0.0 && gamma < 1.0,
        DistributionModel::BlackBox(_) => {
            return Err(CrsError::Domain(
                "black-box sources have no analytic rate function".into(),
            ))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(CrsError::Domain(format!(
            "gamma = {gamma} is outside the domain of {model:?}"
        )))
    }
}

fn check_fractions(alpha_b: f64, alpha_c: f64) -> Result<()> {
    if alpha_b > 0.0 && alpha_c > 0.0 && alpha_b.is_finite() && alpha_c.is_finite() {
        Ok(())
    } else {
        Err(CrsError::DegenerateAllocation(format!(
            "pair fractions must be positive, got ({alpha_b}, {alpha_c})"
        )))
    }
}

fn pair_family(b: &DistributionModel, c: &DistributionModel) -> Result<Family> {
    match (b.family(), c.family()) {
        (Some(fb), Some(fc)) if fb == fc => Ok(fb),
        (Some(_), Some(_)) => Ok(Family::Mixed),
        _ => Err(CrsError::Domain(
            "black-box sources have no analytic rate function".into(),
        )),
    }
}

/// Crossing point `γ(α_b, α_c)`: closed form for same-family pairs,
/// bisection otherwise.
pub fn crossing_gamma(
    b: &DistributionModel,
    c: &DistributionModel,
    alpha_b: f64,
    alpha_c: f64,
) -> Result<f64> {
    check_fractions(alpha_b, alpha_c)?;
    match (b, c) {
        (
            &DistributionModel::Normal {
                mean: yb,
                variance: vb,
            },
            &DistributionModel::Normal {
                mean: yc,
                variance: vc,
            },
        ) => {
            let (wb, wc) = (alpha_b / vb, alpha_c / vc);
            Ok((wb * yb + wc * yc) / (wb + wc))
        }
        (&DistributionModel::Exponential { rate: lb }, &DistributionModel::Exponential { rate: lc }) => {
            Ok((alpha_b + alpha_c) / (alpha_b * lb + alpha_c * lc))
        }
        (
            &DistributionModel::Bernoulli { success_prob: qb },
            &DistributionModel::Bernoulli { success_prob: qc },
        ) => {
            let rho = alpha_c / (alpha_b + alpha_c);
            let log_odds = (1.0 - rho) * odds(qb).ln() + rho * odds(qc).ln();
            Ok(1.0 / (1.0 + (-log_odds).exp()))
        }
        _ => numeric_gamma(b, c, alpha_b, alpha_c),
    }
}

fn odds(q: f64) -> f64 {
    q / (1.0 - q)
}

/// Pairwise rate `G` between cells `b` and `c` under fractions `α_b, α_c`.
pub fn pair_rate(
    b: &DistributionModel,
    c: &DistributionModel,
    alpha_b: f64,
    alpha_c: f64,
) -> Result<PairRate> {
    check_fractions(alpha_b, alpha_c)?;
    let family = pair_family(b, c)?;
    let gamma = crossing_gamma(b, c, alpha_b, alpha_c)?;
    let value = match (b, c) {
        (
            &DistributionModel::Normal {
                mean: yb,
                variance: vb,
            },
            &DistributionModel::Normal {
                mean: yc,
                variance: vc,
            },
        ) => (yc - yb).powi(2) / (2.0 * (vb / alpha_b + vc / alpha_c)),
        (&DistributionModel::Exponential { rate: lb }, &DistributionModel::Exponential { rate: lc }) => {
            let denom = alpha_b * lb + alpha_c * lc;
            let sum = alpha_b + alpha_c;
            -alpha_b * (lb * sum / denom).ln() - alpha_c * (lc * sum / denom).ln()
        }
        (
            &DistributionModel::Bernoulli { success_prob: qb },
            &DistributionModel::Bernoulli { success_prob: qc },
        ) => {
            let rho = alpha_c / (alpha_b + alpha_c);
            let fail = (1.0 - qb).powf(1.0 - rho) * (1.0 - qc).powf(rho);
            let success = qb.powf(1.0 - rho) * qc.powf(rho);
            -(alpha_b + alpha_c) * (fail + success).ln()
        }
        _ => return generic_pair_rate(b, c, alpha_b, alpha_c),
    };
    Ok(PairRate {
        value: value.max(0.0),
        gamma,
        family,
    })
}

/// Numeric infimum of `α_b I_b(γ) + α_c I_c(γ)` over the interval between the
/// two means, found by bisection on the (monotone) derivative.
pub fn generic_pair_rate(
    b: &DistributionModel,
    c: &DistributionModel,
    alpha_b: f64,
    alpha_c: f64,
) -> Result<PairRate> {
    check_fractions(alpha_b, alpha_c)?;
    let family = pair_family(b, c)?;
    let gamma = numeric_gamma(b, c, alpha_b, alpha_c)?;
    let value = alpha_b * rate_i(b, gamma)? + alpha_c * rate_i(c, gamma)?;
    Ok(PairRate {
        value: value.max(0.0),
        gamma,
        family,
    })
}

fn numeric_gamma(
    b: &DistributionModel,
    c: &DistributionModel,
    alpha_b: f64,
    alpha_c: f64,
) -> Result<f64> {
    let (mb, mc) = match (b.mean(), c.mean()) {
        (Some(mb), Some(mc)) => (mb, mc),
        _ => {
            return Err(CrsError::Domain(
                "black-box sources have no analytic rate function".into(),
            ))
        }
    };
    let (mut lo, mut hi) = (mb.min(mc), mb.max(mc));
    for model in [b, c] {
        if check_in_domain(model, lo).is_err() || check_in_domain(model, hi).is_err() {
            return Err(CrsError::Domain(format!(
                "interval [{lo}, {hi}] between the means is not inside the domain of {model:?}"
            )));
        }
    }
    if lo == hi {
        return Ok(lo);
    }
    let slope = |g: f64| -> Result<f64> {
        Ok(alpha_b * rate_i_derivative(b, g)? + alpha_c * rate_i_derivative(c, g)?)
    };
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if hi - lo < GAMMA_TOL || mid <= lo || mid >= hi {
            break;
        }
        if slope(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Overall rate `R(α)` and the slowest (design, context) comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverallRate {
    pub value: f64,
    pub design: usize,
    pub context: usize,
}

/// `R(α) = min_j min_{i ≠ best_j} G(α_best_j, α_ij)`.
///
/// A comparison in which either side has zero budget contributes rate zero.
/// Ties go to the smallest `(context, design)` pair.
pub fn overall_rate(spec: &ProblemSpec, fractions: &AllocationFractions) -> Result<OverallRate> {
    let truth = spec.require_ground_truth()?;
    check_shape(spec, fractions)?;
    let mut slowest: Option<OverallRate> = None;
    for j in 0..spec.m() {
        let best = truth.best(j);
        let ab = fractions.get(best, j);
        for i in (0..spec.k()).filter(|&i| i != best) {
            let ai = fractions.get(i, j);
            let value = if ab > 0.0 && ai > 0.0 {
                pair_rate(spec.model(best, j), spec.model(i, j), ab, ai)?.value
            } else {
                0.0
            };
            if slowest.is_none_or(|s| value < s.value) {
                slowest = Some(OverallRate {
                    value,
                    design: i,
                    context: j,
                });
            }
        }
    }
    Ok(slowest.expect("k >= 2 guarantees at least one comparison"))
}

pub(crate) fn check_shape(spec: &ProblemSpec, fractions: &AllocationFractions) -> Result<()> {
    if fractions.designs() != spec.k() || fractions.contexts() != spec.m() {
        return Err(CrsError::Argument(format!(
            "fractions are {}x{}, problem is {}x{}",
            fractions.designs(),
            fractions.contexts(),
            spec.k(),
            spec.m()
        )));
    }
    if !spec.is_analytic() {
        return Err(CrsError::Domain(
            "rate functions need analytic models in every cell".into(),
        ));
    }
    Ok(())
}
