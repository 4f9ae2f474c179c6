use crs_core::ratefn::{crossing_gamma, generic_pair_rate, overall_rate, pair_rate};
use crs_core::{AllocationFractions, DistributionModel, Grid, ProblemSpec};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = (DistributionModel, DistributionModel)> {
    prop_oneof![
        (-5.0f64..5.0, 0.1f64..5.0, -5.0f64..5.0, 0.1f64..5.0).prop_map(|(a, va, b, vb)| (
            DistributionModel::normal(a, va).unwrap(),
            DistributionModel::normal(b, vb).unwrap()
        )),
        (0.2f64..5.0, 0.2f64..5.0).prop_map(|(a, b)| (
            DistributionModel::exponential(a).unwrap(),
            DistributionModel::exponential(b).unwrap()
        )),
        (0.02f64..0.98, 0.02f64..0.98).prop_map(|(a, b)| (
            DistributionModel::bernoulli(a).unwrap(),
            DistributionModel::bernoulli(b).unwrap()
        )),
    ]
}

proptest! {
    #[test]
    fn pair_rate_is_nonnegative_and_matches_numeric(
        (b, c) in family(),
        ab in 0.01f64..1.0,
        ac in 0.01f64..1.0,
    ) {
        let closed = pair_rate(&b, &c, ab, ac).unwrap();
        prop_assert!(closed.value >= 0.0);
        let numeric = generic_pair_rate(&b, &c, ab, ac).unwrap();
        prop_assert!((closed.value - numeric.value).abs() < 1e-8);
        let (yb, yc) = (b.mean().unwrap(), c.mean().unwrap());
        if yb != yc {
            prop_assert!(closed.value > 0.0);
        }
        prop_assert!(closed.gamma >= yb.min(yc) - 1e-12 && closed.gamma <= yb.max(yc) + 1e-12);
    }

    #[test]
    fn equal_means_have_zero_rate((b, _) in family(), ab in 0.01f64..1.0, ac in 0.01f64..1.0) {
        let r = pair_rate(&b, &b, ab, ac).unwrap();
        prop_assert!(r.value.abs() < 1e-12);
        prop_assert!((r.gamma - b.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn normal_gamma_is_precision_weighted_mean(
        yb in -5.0f64..5.0, vb in 0.1f64..5.0, yc in -5.0f64..5.0, vc in 0.1f64..5.0,
        ab in 0.01f64..1.0, ac in 0.01f64..1.0,
    ) {
        let b = DistributionModel::normal(yb, vb).unwrap();
        let c = DistributionModel::normal(yc, vc).unwrap();
        let expect = (ab * yb / vb + ac * yc / vc) / (ab / vb + ac / vc);
        prop_assert!((crossing_gamma(&b, &c, ab, ac).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn overall_rate_is_the_smallest_pair_rate(
        means in proptest::collection::vec(0.0f64..3.0, 6),
        raw in proptest::collection::vec(0.05f64..1.0, 6),
    ) {
        let models = Grid::from_fn(3, 2, |i, j| DistributionModel::normal(means[i * 2 + j], 1.0).unwrap());
        let Ok(spec) = ProblemSpec::analytic(models) else { return Ok(()) };
        let f = AllocationFractions::normalized(Grid::from_fn(3, 2, |i, j| raw[i * 2 + j])).unwrap();
        let r = overall_rate(&spec, &f).unwrap();
        let truth = spec.ground_truth().unwrap();
        for j in 0..2 {
            let b = truth.best(j);
            for i in (0..3).filter(|&i| i != b) {
                let g = pair_rate(spec.model(b, j), spec.model(i, j), f.get(b, j), f.get(i, j)).unwrap().value;
                prop_assert!(r.value <= g);
            }
        }
    }
}
