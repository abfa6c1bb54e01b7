//! Monte-Carlo properties of the test harness and the training loop at
//! reduced sizes.

mod common;

use slice_infomin::cca::{self, Ridge};
use slice_infomin::data::{fairness_toy, Dataset, Pattern};
use slice_infomin::harness::{run_cell, TestMethod, TestProtocol};
use slice_infomin::slicing::{sample_slices, PolyConfig};
use slice_infomin::train::{self, InfominConfig, ModelConfig, RefinementConfig, Trainer};
use slice_infomin::Matrix;

fn cheap_protocol(seed: u64) -> TestProtocol {
    TestProtocol {
        fit_size: 2000,
        repeats: 200,
        permutations: 100,
        slices: 50,
        seed,
        ..TestProtocol::default()
    }
}

#[test]
fn slice_power_does_not_increase_with_alpha() {
    let alphas = [0.2, 0.4, 0.6, 0.8];
    let seeds = 3;
    for pattern in Pattern::ALL {
        let mean: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                (0..seeds)
                    .map(|s| run_cell(pattern, a, TestMethod::Slice, &cheap_protocol(s)).unwrap().power)
                    .sum::<f64>()
                    / seeds as f64
            })
            .collect();
        for w in mean.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "{pattern}: power rises along alpha: {mean:?}");
        }
    }
}

#[test]
fn near_independent_cells_reject_at_the_significance_level() {
    let protocol = TestProtocol {
        repeats: 400,
        ..cheap_protocol(9)
    };
    for method in [TestMethod::Slice, TestMethod::Pearson, TestMethod::Dcorr] {
        let r = run_cell(Pattern::Sin, 0.999, method, &protocol).unwrap();
        // binomial sd at 400 trials is 0.011; allow four of them
        assert!((r.power - 0.05).abs() < 0.045, "{method:?} rejects {}", r.power);
    }
}

#[test]
fn square_pattern_defeats_pearson_but_not_slice() {
    let protocol = cheap_protocol(4);
    let pearson = run_cell(Pattern::Square, 0.2, TestMethod::Pearson, &protocol).unwrap();
    let slice = run_cell(Pattern::Square, 0.2, TestMethod::Slice, &protocol).unwrap();
    assert!(pearson.power <= 0.15, "pearson power {}", pearson.power);
    assert!(slice.power >= 0.6, "slice power {}", slice.power);
}

#[test]
fn refinement_rarely_lowers_the_fitted_statistic() {
    let poly = PolyConfig::default();
    let mut held = 0;
    for seed in 0..100u64 {
        let z = common::gaussian(300, 3, seed);
        let e = common::gaussian(300, 2, seed + 500);
        let t = Matrix::from_fn(300, 2, |i, j| 0.3 * z[(i, j)].sin() + e[(i, j)]);
        let slices = sample_slices(5, 3, 2, seed).unwrap();
        let pre = cca::estimate_si(z.as_ref(), t.as_ref(), slices.clone(), poly, Ridge::default()).unwrap();
        let out = train::refine_slices(slices, z.as_ref(), t.as_ref(), poly, Ridge::default(), 0.05, 1).unwrap();
        let post = cca::estimate_si(z.as_ref(), t.as_ref(), out.slices, poly, Ridge::default()).unwrap();
        if post.statistic >= pre.statistic - 1e-6 {
            held += 1;
        }
    }
    assert!(held >= 90, "refinement held in {held}/100 trials");
}

fn small_config(seed: u64, beta: f64) -> InfominConfig {
    InfominConfig {
        beta,
        seed,
        n_prime: 500,
        iterations: 150,
        slices: 30,
        batch_size: 128,
        learning_rate: 1e-2,
        model: ModelConfig {
            encoder_hidden: vec![32],
            z_dim: 4,
            head_hidden: vec![16],
            ..ModelConfig::default()
        },
        ..InfominConfig::default()
    }
}

#[test]
fn refinement_triggers_only_below_threshold() {
    let data = fairness_toy(1500, 2).unwrap();
    for &threshold in &[0.0, 0.5, 1.01] {
        let base = small_config(2, 1.0);
        let refine = InfominConfig {
            refinement: RefinementConfig {
                enabled: true,
                threshold,
                ..RefinementConfig::default()
            },
            ..base.clone()
        };
        let (e, h) = train::build_models(10, 1, &base).unwrap();
        let plain = Trainer::new(&data, e.clone(), h.clone(), &base).unwrap();
        let refining = Trainer::new(&data, e, h, &refine).unwrap();
        for it in 0..5 {
            let pre = plain.max_step(it).unwrap().fitted.statistic;
            let step = refining.max_step(it).unwrap();
            let triggered = step.refined || step.refine_skipped;
            assert_eq!(triggered, pre < threshold, "threshold {threshold}, fitted {pre}");
        }
    }
}

/// The toy task with `T` replaced by independent noise, split 2:1.
fn with_noise_protected(data: Dataset, seed: u64) -> Dataset {
    let n = data.rows();
    let t = common::gaussian(n, 2, seed + 10_000);
    Dataset::new(data.x, data.y, t).unwrap().with_split(2 * n / 3, n / 3, seed).unwrap()
}

#[test]
fn penalizing_independent_noise_costs_little_utility() {
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let data = with_noise_protected(fairness_toy(3000, seed).unwrap(), seed);
        let (tr, te) = (data.train(), data.test());
        let utility = |beta: f64| {
            // long enough that both runs converge; shorter runs mostly
            // measure the slowdown from the noisier gradient
            let cfg = InfominConfig {
                iterations: 600,
                batch_size: 256,
                n_prime: 1000,
                ..small_config(seed, beta)
            };
            let (e, h) = train::build_models(10, 1, &cfg).unwrap();
            let out = train::train_infomin(&tr, e, h, &cfg).unwrap();
            train::evaluate_utility(&out.encoder, &out.head, &te, cfg.utility).unwrap()
        };
        ratios.push(utility(16.0) / utility(0.0));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean > 0.98, "mean utility ratio {mean:.4} ({ratios:?})");
    assert!(ratios.iter().all(|&r| r > 0.95), "a seed degraded by more than 5%: {ratios:?}");
}
