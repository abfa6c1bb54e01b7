mod common;

use common::*;
use slice_infomin::cca::{self, Ridge};
use slice_infomin::nn::{self, Activation, Layer, Mlp};
use slice_infomin::slicing::{sample_slices, PolyConfig, SliceSet};
use slice_infomin::Matrix;

#[test]
fn si_gradient_matches_finite_differences() {
    let worst = (0..60).map(si_gradient_case).fold(0.0f64, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let worst = (0..60).map(mlp_backward_case).fold(0.0f64, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

fn fitted(d: usize, dt: usize, s: usize, order: usize, seed: u64) -> slice_infomin::SiEstimate {
    let z = gaussian(300, d, seed);
    let n = gaussian(300, dt, seed + 1);
    let t = Matrix::from_fn(300, dt, |i, j| z[(i, 0)].powi(2) + n[(i, j)]);
    let slices = sample_slices(s, d, dt, seed).unwrap();
    cca::estimate_si(z.as_ref(), t.as_ref(), slices, PolyConfig::new(order).unwrap(), Ridge::default()).unwrap()
}

#[test]
fn uniform_shift_has_zero_directional_derivative() {
    for seed in 0..10 {
        let fit = fitted(3, 2, 6, 3, seed);
        let z = gaussian(40, 3, seed + 50);
        let t = gaussian(40, 2, seed + 51);
        let g = cca::si_gradient(z.as_ref(), t.as_ref(), &fit).unwrap();
        for j in 0..3 {
            let dir: f64 = g.grad.col(j).iter().sum();
            assert!(dir.abs() < 1e-8, "column {j}: {dir:e}");
        }
    }
}

/// Forward-mode dual numbers: value and derivative along one input entry.
#[derive(Clone, Copy)]
struct Dual(f64, f64);

impl Dual {
    fn add(self, o: Dual) -> Dual {
        Dual(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: Dual) -> Dual {
        Dual(self.0 - o.0, self.1 - o.1)
    }
    fn mul(self, o: Dual) -> Dual {
        Dual(self.0 * o.0, self.1 * o.0 + self.0 * o.1)
    }
    fn div(self, o: Dual) -> Dual {
        Dual(self.0 / o.0, (self.1 * o.0 - self.0 * o.1) / (o.0 * o.0))
    }
    fn sqrt(self) -> Dual {
        let s = self.0.sqrt();
        Dual(s, self.1 / (2.0 * s))
    }
    fn tanh(self) -> Dual {
        let t = self.0.tanh();
        Dual(t, self.1 * (1.0 - t * t))
    }
    fn c(v: f64) -> Dual {
        Dual(v, 0.0)
    }
}

/// Batch ŜI written out from its definition, differentiated along `(r, c)`.
fn dual_si(z: &Matrix, t_score: &[f64], slices: &SliceSet, w: &[f64], order: usize, r: usize, c: usize) -> f64 {
    let (m, d) = (z.nrows(), z.ncols());
    let zd = |i: usize, j: usize| Dual(z[(i, j)], if (i, j) == (r, c) { 1.0 } else { 0.0 });
    let mf = Dual::c(m as f64);
    let mut std = vec![vec![Dual::c(0.0); d]; m];
    for j in 0..d {
        let mean = (0..m).fold(Dual::c(0.0), |a, i| a.add(zd(i, j))).div(mf);
        let var = (0..m).fold(Dual::c(0.0), |a, i| {
            let e = zd(i, j).sub(mean);
            a.add(e.mul(e))
        });
        let sd = var.div(mf).sqrt();
        for i in 0..m {
            std[i][j] = zd(i, j).sub(mean).div(sd);
        }
    }
    let score: Vec<Dual> = (0..m)
        .map(|i| {
            let mut acc = Dual::c(0.0);
            for s in 0..slices.count() {
                let p = (0..d).fold(Dual::c(0.0), |a, j| a.add(Dual::c(slices.theta[(s, j)]).mul(std[i][j])));
                let th = p.tanh();
                let mut pow = Dual::c(1.0);
                for k in 0..order {
                    pow = pow.mul(th);
                    acc = acc.add(Dual::c(w[s * order + k]).mul(pow));
                }
            }
            acc
        })
        .collect();
    let ma = score.iter().fold(Dual::c(0.0), |a, &b| a.add(b)).div(mf);
    let mb = t_score.iter().sum::<f64>() / m as f64;
    let (mut sab, mut saa, mut sbb) = (Dual::c(0.0), Dual::c(0.0), 0.0);
    for i in 0..m {
        let a = score[i].sub(ma);
        let b = t_score[i] - mb;
        sab = sab.add(a.mul(Dual::c(b)));
        saa = saa.add(a.mul(a));
        sbb += b * b;
    }
    sab.div(saa.mul(Dual::c(sbb)).sqrt()).1
}

fn t_side_score(t: &Matrix, slices: &SliceSet, v: &[f64], order: usize) -> Vec<f64> {
    let (m, d) = (t.nrows(), t.ncols());
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let mean = t.col(j).iter().sum::<f64>() / m as f64;
            let var = t.col(j).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64;
            (mean, var.sqrt())
        })
        .collect();
    (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for s in 0..slices.count() {
                let p: f64 = (0..d).map(|j| slices.phi[(s, j)] * (t[(i, j)] - stats[j].0) / stats[j].1).sum();
                for k in 1..=order {
                    acc += v[s * order + k - 1] * p.tanh().powi(k as i32);
                }
            }
            acc
        })
        .collect()
}

#[test]
fn gradient_matches_forward_mode_chain_rule() {
    for (seed, order) in [(1u64, 3usize), (2, 1), (3, 2)] {
        let fit = fitted(3, 2, 4, order, seed);
        let z = gaussian(7, 3, seed + 10);
        let t = gaussian(7, 2, seed + 11);
        let g = cca::si_gradient(z.as_ref(), t.as_ref(), &fit).unwrap();
        let ts = t_side_score(&t, &fit.slices, &fit.solution.v, order);
        for r in 0..7 {
            for c in 0..3 {
                let exact = dual_si(&z, &ts, &fit.slices, &fit.solution.w, order, r, c);
                assert!((g.grad[(r, c)] - exact).abs() < 1e-10, "({r},{c}) {} vs {exact}", g.grad[(r, c)]);
            }
        }
    }
}

#[test]
fn single_slice_linear_feature_gradient() {
    // K = 1 with all weight on one slice: the sparsest path through the
    // feature and standardization backward passes
    let mut fit = fitted(2, 1, 3, 1, 9);
    fit.solution.w = vec![0.0, 1.0, 0.0];
    let z = gaussian(5, 2, 90);
    let t = gaussian(5, 1, 91);
    let g = cca::si_gradient(z.as_ref(), t.as_ref(), &fit).unwrap();
    let ts = t_side_score(&t, &fit.slices, &fit.solution.v, 1);
    for r in 0..5 {
        for c in 0..2 {
            let exact = dual_si(&z, &ts, &fit.slices, &fit.solution.w, 1, r, c);
            assert!((g.grad[(r, c)] - exact).abs() < 1e-10);
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut net = Mlp::with_hidden(3, &[5, 4], 2, Activation::Tanh, Activation::Identity, 0.0, 1).unwrap();
    let x = gaussian(8, 3, 1);
    net.forward_train(x.as_ref(), None).unwrap();
    let g = net.backward(Matrix::zeros(8, 2).as_ref()).unwrap();
    assert!(g.flat().iter().all(|&v| v == 0.0));
    assert!(g.input.col_iter().all(|c| c.iter().all(|&v| v == 0.0)));
}

#[test]
fn linear_least_squares_gradient_is_residual_form() {
    // pred = XW + b, loss = mean over n·k entries of (pred − Y)²:
    // ∂W = 2/(nk) Xᵀ R, ∂b = 2/(nk) 1ᵀR with R = XW + b − Y
    let (n, d, k) = (20, 3, 2);
    let x = gaussian(n, d, 5);
    let y = gaussian(n, k, 6);
    let w = gaussian(d, k, 7);
    let b = vec![0.3, -0.2];
    let mut net = Mlp::from_layers(
        vec![Layer {
            weights: w.clone(),
            bias: b.clone(),
            activation: Activation::Identity,
        }],
        0.0,
    )
    .unwrap();
    let pred = net.forward_train(x.as_ref(), None).unwrap();
    let (_, d_pred) = nn::mse(pred.as_ref(), y.as_ref()).unwrap();
    let g = net.backward(d_pred.as_ref()).unwrap();
    let scale = 2.0 / (n * k) as f64;
    for j in 0..k {
        let resid: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|c| x[(i, c)] * w[(c, j)]).sum::<f64>() + b[j] - y[(i, j)])
            .collect();
        for c in 0..d {
            let expect = scale * (0..n).map(|i| x[(i, c)] * resid[i]).sum::<f64>();
            assert!((g.layers[0].weights[(c, j)] - expect).abs() < 1e-12);
        }
        let expect_b = scale * resid.iter().sum::<f64>();
        assert!((g.layers[0].bias[j] - expect_b).abs() < 1e-12);
    }
}
