mod common;

use common::gaussian;
use proptest::prelude::*;
use slice_infomin::baselines::{distance_correlation, pearson_proxy};
use slice_infomin::cca::{self, solve_cca, Ridge};
use slice_infomin::data::{fairness_toy, Pattern, SyntheticSpec};
use slice_infomin::harness::quantile_threshold;
use slice_infomin::nn::{Activation, Mlp};
use slice_infomin::rng;
use slice_infomin::slicing::{feature_map, sample_slices, PolyConfig};
use slice_infomin::Matrix;

fn row_norm(m: &Matrix, i: usize) -> f64 {
    (0..m.ncols()).map(|j| m[(i, j)].powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slices_lie_on_the_unit_sphere(s in 1usize..40, dz in 1usize..12, dt in 1usize..12, seed in any::<u64>()) {
        let set = sample_slices(s, dz, dt, seed).unwrap();
        prop_assert_eq!(set.theta.nrows(), s);
        prop_assert_eq!(set.phi.ncols(), dt);
        for i in 0..s {
            prop_assert!((row_norm(&set.theta, i) - 1.0).abs() < 1e-12);
            prop_assert!((row_norm(&set.phi, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn features_are_bounded_by_one(order in 1usize..5, seed in any::<u64>()) {
        let x = gaussian(30, 3, seed);
        let set = sample_slices(4, 3, 1, seed).unwrap();
        let f = feature_map(x.as_ref(), set.theta.as_ref(), &PolyConfig::new(order).unwrap()).unwrap();
        prop_assert_eq!(f.ncols(), 4 * order);
        for j in 0..f.ncols() {
            for i in 0..f.nrows() {
                prop_assert!(f[(i, j)].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn cca_rho_is_a_symmetric_correlation(seed in any::<u64>(), p in 1usize..5, q in 1usize..5) {
        let a = gaussian(80, p, seed);
        let noise = gaussian(80, q, seed ^ 1);
        let b = Matrix::from_fn(80, q, |i, j| a[(i, j % p)] + noise[(i, j)]);
        let ab = solve_cca(a.as_ref(), b.as_ref(), Ridge::default()).unwrap();
        let ba = solve_cca(b.as_ref(), a.as_ref(), Ridge::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.rho));
        prop_assert!((ab.rho - ba.rho).abs() < 1e-9);
    }

    #[test]
    fn estimate_si_is_reproducible(seed in any::<u64>()) {
        let z = gaussian(60, 3, seed);
        let t = gaussian(60, 2, seed ^ 7);
        let run = || {
            let set = sample_slices(5, 3, 2, seed).unwrap();
            cca::estimate_si(z.as_ref(), t.as_ref(), set, PolyConfig::default(), Ridge::default()).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.statistic.to_bits(), b.statistic.to_bits());
        prop_assert_eq!(a.solution.w, b.solution.w);
    }

    #[test]
    fn dependence_scores_lie_in_unit_interval(seed in any::<u64>(), d in 1usize..4) {
        let z = gaussian(40, d, seed);
        let t = gaussian(40, 2, seed ^ 3);
        let p = pearson_proxy(z.as_ref(), t.as_ref()).unwrap().value;
        let dc = distance_correlation(z.as_ref(), t.as_ref()).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&dc));
    }

    #[test]
    fn threshold_is_monotone_in_significance(seed in any::<u64>(), a in 0.01f64..0.5, b in 0.01f64..0.5) {
        let null: Vec<f64> = gaussian(50, 1, seed).col_as_slice(0).to_vec();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        // smaller significance means a higher quantile
        prop_assert!(quantile_threshold(&null, lo).unwrap() >= quantile_threshold(&null, hi).unwrap());
    }

    #[test]
    fn synthetic_signal_stays_in_unit_interval(alpha in 0.01f64..0.99, seed in any::<u64>(), p in 0usize..4) {
        let spec = SyntheticSpec::new(Pattern::ALL[p], alpha, seed).unwrap();
        let (x, y) = spec.draw(50, &mut rng::stream(seed, "prop", &[]));
        prop_assert_eq!(x.ncols(), y.ncols());
        let s = spec.signal(x.as_ref());
        for j in 0..s.ncols() {
            for i in 0..s.nrows() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s[(i, j)]));
            }
        }
    }

    #[test]
    fn splits_partition_disjoint_rows(train in 5usize..60, test in 5usize..40, seed in any::<u64>()) {
        let d = fairness_toy(100, seed).unwrap().with_split(train, test, seed).unwrap();
        let s = d.split.as_ref().unwrap();
        prop_assert_eq!(s.train.len(), train);
        prop_assert_eq!(s.test.len(), test);
        prop_assert!(s.train.iter().all(|i| !s.test.contains(i)));
    }

    #[test]
    fn mlp_params_round_trip(seed in any::<u64>(), h in 1usize..8) {
        let net = Mlp::new(&[3, h, 2], &[Activation::Tanh, Activation::Identity], 0.0, seed).unwrap();
        let mut other = Mlp::new(&[3, h, 2], &[Activation::Tanh, Activation::Identity], 0.0, seed ^ 1).unwrap();
        other.set_params(&net.params()).unwrap();
        prop_assert_eq!(&other, &net);
        prop_assert_eq!(net.params().len(), net.param_count());
    }
}
