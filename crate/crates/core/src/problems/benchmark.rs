//! Noisy test functions evaluated at the shifted point `z − x`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::grid::Grid;
use crate::model::{ContextSet, DesignSet, DistributionModel, GroundTruth, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkFunction {
    Rastrigin,
    Sphere,
    Rosenbrock,
    #[serde(rename = "mccormick")]
    McCormick,
}

impl BenchmarkFunction {
    pub const ALL: [BenchmarkFunction; 4] = [
        BenchmarkFunction::Rastrigin,
        BenchmarkFunction::Sphere,
        BenchmarkFunction::Rosenbrock,
        BenchmarkFunction::McCormick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkFunction::Rastrigin => "rastrigin",
            BenchmarkFunction::Sphere => "sphere",
            BenchmarkFunction::Rosenbrock => "rosenbrock",
            BenchmarkFunction::McCormick => "mccormick",
        }
    }

    /// `f(z, x)` for design `z` under context `x`.
    pub fn eval(self, z: &[f64], x: &[f64]) -> Result<f64> {
        if z.len() != x.len() {
            return Err(CrsError::Argument(format!(
                "design has dimension {}, context has {}",
                z.len(),
                x.len()
            )));
        }
        let u: Vec<f64> = z.iter().zip(x).map(|(z, x)| z - x).collect();
        let d = u.len();
        match self {
            BenchmarkFunction::Rastrigin => Ok(10.0 * d as f64
                + u.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()),
            BenchmarkFunction::Sphere => Ok(u.iter().map(|v| v * v).sum()),
            BenchmarkFunction::Rosenbrock => {
                if d < 2 {
                    return Err(CrsError::Argument("rosenbrock needs dimension ≥ 2".into()));
                }
                Ok(u.windows(2)
                    .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                    .sum())
            }
            BenchmarkFunction::McCormick => {
                if d != 2 {
                    return Err(CrsError::Argument("mccormick needs dimension 2".into()));
                }
                let (a, b) = (u[0], u[1]);
                Ok((a + b).sin() + (a - b).powi(2) - 1.5 * a + 2.5 * b + 1.0)
            }
        }
    }
}

impl fmt::Display for BenchmarkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkFunction {
    type Err = CrsError;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkFunction::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CrsError::config("function", format!("unknown benchmark `{s}`")))
    }
}

/// A benchmark function on explicit context and design grids with additive
/// `N(0, noise_variance)` noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub function: BenchmarkFunction,
    pub contexts: Vec<Vec<f64>>,
    pub designs: Vec<Vec<f64>>,
    pub noise_variance: f64,
}

/// `start + step·t` for `t = 0..count`, built from integers so presets are
/// bit-stable.
fn ladder(start: i32, step: i32, count: i32, scale: f64) -> Vec<f64> {
    (0..count).map(|t| f64::from(start + step * t) / scale).collect()
}

fn points(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}

/// Row-major product, second coordinate fastest.
fn mesh(first: &[f64], second: &[f64]) -> Vec<Vec<f64>> {
    first
        .iter()
        .flat_map(|&a| second.iter().map(move |&b| vec![a, b]))
        .collect()
}

impl BenchmarkSpec {
    pub fn preset(function: BenchmarkFunction) -> Self {
        match function {
            BenchmarkFunction::Rastrigin => BenchmarkSpec {
                function,
                contexts: points(&ladder(-75, 30, 6, 100.0)),
                designs: points(&ladder(-90, 20, 10, 100.0)),
                noise_variance: 121.0,
            },
            BenchmarkFunction::Sphere => BenchmarkSpec {
                function,
                contexts: points(&ladder(-45, 30, 4, 100.0)),
                designs: points(&ladder(-125, 25, 11, 100.0)),
                noise_variance: 0.05,
            },
            BenchmarkFunction::Rosenbrock => {
                let x = ladder(-30, 15, 5, 100.0);
                let z = ladder(0, 75, 3, 100.0);
                BenchmarkSpec {
                    function,
                    contexts: mesh(&x, &x),
                    designs: mesh(&z, &z),
                    noise_variance: 2.25,
                }
            }
            BenchmarkFunction::McCormick => BenchmarkSpec {
                function,
                contexts: vec![vec![-1.2, 0.0], vec![0.0, 1.2], vec![1.2, 0.0]],
                designs: mesh(&ladder(-15, 5, 7, 10.0), &ladder(-30, 5, 7, 10.0)),
                noise_variance: 0.49,
            },
        }
    }

    pub fn mean(&self, design: usize, context: usize) -> Result<f64> {
        let z = self
            .designs
            .get(design)
            .ok_or_else(|| CrsError::Argument(format!("design {design} out of range")))?;
        let x = self
            .contexts
            .get(context)
            .ok_or_else(|| CrsError::Argument(format!("context {context} out of range")))?;
        self.function.eval(z, x)
    }

    pub fn means(&self) -> Result<Grid<f64>> {
        let rows = (0..self.designs.len())
            .map(|i| (0..self.contexts.len()).map(|j| self.mean(i, j)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Grid::from_rows(rows)
    }

    /// Grid argmin per context; errors on ties.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        GroundTruth::from_means(self.means()?)
    }

    pub fn to_problem(&self) -> Result<ProblemSpec> {
        if !(self.noise_variance > 0.0) {
            return Err(CrsError::config("noise_variance", "must be positive"));
        }
        let models = self
            .means()?
            .map(|&mean| DistributionModel::Normal {
                mean,
                variance: self.noise_variance,
            });
        ProblemSpec::new(
            ContextSet::uniform(self.contexts.clone())?,
            DesignSet::new(self.designs.clone())?,
            models,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn serde_names_match_parser() {
        for f in BenchmarkFunction::ALL {
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
            assert_eq!(f.name().parse::<BenchmarkFunction>().unwrap(), f);
        }
    }

    #[test]
    fn minima_at_documented_points() {
        for x in [-0.75, 0.0, 0.45] {
            assert_eq!(BenchmarkFunction::Rastrigin.eval(&[x], &[x]).unwrap(), 0.0);
            assert_eq!(BenchmarkFunction::Sphere.eval(&[x], &[x]).unwrap(), 0.0);
        }
        let x = [-0.15, 0.3];
        let z = [x[0] + 1.0, x[1] + 1.0];
        assert!(BenchmarkFunction::Rosenbrock.eval(&z, &x).unwrap().abs() < 1e-12);
        let f = BenchmarkFunction::McCormick.eval(&[-0.54719, -1.54719], &[0.0, 0.0]).unwrap();
        assert!((f + 1.9133).abs() < 5e-4, "{f}");
    }

    #[test]
    fn dimension_mismatch_is_argument_error() {
        assert!(matches!(
            BenchmarkFunction::Sphere.eval(&[0.0, 1.0], &[0.0]),
            Err(CrsError::Argument(_))
        ));
        assert!(BenchmarkFunction::McCormick.eval(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn preset_sizes_and_spacing() {
        let sizes: Vec<(usize, usize)> = BenchmarkFunction::ALL
            .iter()
            .map(|&f| {
                let s = BenchmarkSpec::preset(f);
                (s.contexts.len(), s.designs.len())
            })
            .collect();
        assert_eq!(sizes, vec![(6, 10), (4, 11), (25, 9), (3, 49)]);

        let r = BenchmarkSpec::preset(BenchmarkFunction::Rastrigin);
        assert_eq!(r.designs[0], vec![-0.9]);
        assert_eq!(r.designs[9], vec![0.9]);
        assert_eq!(r.contexts[5], vec![0.75]);
        let mc = BenchmarkSpec::preset(BenchmarkFunction::McCormick);
        assert_eq!(mc.designs[0], vec![-1.5, -3.0]);
        assert_eq!(mc.designs[1], vec![-1.5, -2.5]);
        assert_eq!(mc.designs[48], vec![1.5, 0.0]);
    }

    #[test]
    fn presets_are_bit_stable_and_tie_free() {
        for f in BenchmarkFunction::ALL {
            let a = BenchmarkSpec::preset(f);
            assert_eq!(a, BenchmarkSpec::preset(f));
            a.ground_truth().unwrap();
        }
    }

    #[test]
    fn sphere_best_designs() {
        let t = BenchmarkSpec::preset(BenchmarkFunction::Sphere).ground_truth().unwrap();
        // designs -1.25 + 0.25 i; contexts -0.45, -0.15, 0.15, 0.45
        assert_eq!(t.best_design(), &[3, 4, 6, 7]);
    }

    #[test]
    fn rastrigin_best_is_nearest_design() {
        let s = BenchmarkSpec::preset(BenchmarkFunction::Rastrigin);
        let t = s.ground_truth().unwrap();
        // brute-force argmin over the grid for context -0.75
        let f: Vec<f64> = (0..10).map(|i| s.mean(i, 0).unwrap()).collect();
        let best = (0..10).min_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
        assert_eq!(t.best(0), best);
        assert_eq!(best, 1);
    }

    #[test]
    fn samples_have_declared_moments() {
        let spec = BenchmarkSpec::preset(BenchmarkFunction::Sphere).to_problem().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let ys: Vec<f64> = (0..n).map(|_| spec.sample(2, 1, &mut rng).unwrap()).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let truth = BenchmarkFunction::Sphere.eval(&[-0.75], &[-0.15]).unwrap();
        assert!((mean - truth).abs() < 4.0 * (0.05f64 / n as f64).sqrt());
        assert!((var / 0.05 - 1.0).abs() < 0.1);
    }
}
