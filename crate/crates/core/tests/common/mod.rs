//! Independent reference implementations shared by the integration tests.
//! Everything here goes through nalgebra or plain loops, never through the
//! crate's own linear algebra.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use slice_infomin::rng;
use slice_infomin::Matrix;

pub fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, "oracle-test", &[]);
    Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal))
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for j in 0..c.ncols() {
        let mean = c.column(j).mean();
        c.column_mut(j).add_scalar_mut(-mean);
    }
    c
}

fn inv_sqrt(c: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let top = eig.eigenvalues.max();
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| if l > rel_floor * top { 1.0 / l.sqrt() } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Top canonical correlation by whitening and a full SVD. `ridge` is
/// relative to the mean covariance diagonal.
pub fn cca_oracle(a: &Matrix, b: &Matrix, ridge: f64) -> f64 {
    let (a, b) = (centered(&to_na(a)), centered(&to_na(b)));
    let n = a.nrows() as f64 - 1.0;
    let mut caa = a.transpose() * &a / n;
    let mut cbb = b.transpose() * &b / n;
    let cab = a.transpose() * &b / n;
    let ra = ridge * caa.trace() / caa.nrows() as f64;
    let rb = ridge * cbb.trace() / cbb.nrows() as f64;
    for i in 0..caa.nrows() {
        caa[(i, i)] += ra;
    }
    for i in 0..cbb.nrows() {
        cbb[(i, i)] += rb;
    }
    let m = inv_sqrt(&caa, 1e-10) * cab * inv_sqrt(&cbb, 1e-10);
    m.singular_values().max()
}

/// Sample Pearson correlation by the textbook formula.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Biased distance correlation from full double-centered distance matrices.
pub fn dcorr_oracle(z: &Matrix, t: &Matrix) -> f64 {
    let n = z.nrows();
    let dist = |m: &Matrix| {
        DMatrix::from_fn(n, n, |i, j| {
            (0..m.ncols()).map(|k| (m[(i, k)] - m[(j, k)]).powi(2)).sum::<f64>().sqrt()
        })
    };
    let center = |d: DMatrix<f64>| {
        let rows: Vec<f64> = (0..n).map(|i| d.row(i).mean()).collect();
        let cols: Vec<f64> = (0..n).map(|j| d.column(j).mean()).collect();
        let all = d.mean();
        DMatrix::from_fn(n, n, |i, j| d[(i, j)] - rows[i] - cols[j] + all)
    };
    let a = center(dist(z));
    let b = center(dist(t));
    let ab = a.component_mul(&b).sum();
    let aa = a.component_mul(&a).sum();
    let bb = b.component_mul(&b).sum();
    if aa * bb <= 0.0 {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).max(0.0).sqrt()
}

/// `max |analytic − numeric| / max |numeric|` over all entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let err = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn flatten(m: &Matrix) -> Vec<f64> {
    (0..m.ncols()).flat_map(|j| m.col_as_slice(j).to_vec()).collect()
}

pub fn unflatten(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| v[j * rows + i])
}

use slice_infomin::cca::{self, Ridge};
use slice_infomin::nn::{Activation, Mlp};
use slice_infomin::slicing::{sample_slices, PolyConfig};

/// Finite-difference check of `si_gradient` on one random instance; returns
/// the relative error.
pub fn si_gradient_case(case: u64) -> f64 {
    let mut r = rng::stream(case, "fd-si", &[]);
    let d = 1 + (case % 4) as usize;
    let dt = 1 + (case % 3) as usize;
    let s = 2 + (case % 5) as usize;
    let order = 1 + (case % 3) as usize;
    let m = 32;
    let fit_z = gaussian(400, d, case * 7 + 1);
    let noise = gaussian(400, dt, case * 7 + 2);
    let fit_t = Matrix::from_fn(400, dt, |i, j| fit_z[(i, j % d)].sin() + 0.5 * noise[(i, j)]);
    let slices = sample_slices(s, d, dt, r.random()).unwrap();
    let fitted = cca::estimate_si(
        fit_z.as_ref(),
        fit_t.as_ref(),
        slices,
        PolyConfig::new(order).unwrap(),
        Ridge::default(),
    )
    .unwrap();
    let z = gaussian(m, d, case * 7 + 3);
    let t_noise = gaussian(m, dt, case * 7 + 4);
    let t = Matrix::from_fn(m, dt, |i, j| z[(i, j % d)].sin() + 0.5 * t_noise[(i, j)]);
    let g = cca::si_gradient(z.as_ref(), t.as_ref(), &fitted).unwrap();
    assert!(!g.degenerate);
    let fd = central_diff(&flatten(&z), 1e-5, |p| {
        cca::evaluate_si(unflatten(p, m, d).as_ref(), t.as_ref(), &fitted).unwrap()
    });
    relative_error(&flatten(&g.grad), &fd)
}

/// Finite-difference check of `Mlp::backward` for the scalar loss
/// `Σ U ∘ net(X)`, over all parameters and inputs.
pub fn mlp_backward_case(case: u64) -> f64 {
    let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
    let depth = 1 + (case % 3) as usize;
    let mut sizes = vec![1 + (case % 5) as usize];
    for k in 0..depth {
        sizes.push(1 + ((case / 3 + k as u64 * 11) % 8) as usize);
    }
    let activations: Vec<Activation> = (0..depth).map(|k| acts[(case as usize + k) % 3]).collect();
    let mut net = Mlp::new(&sizes, &activations, 0.0, case).unwrap();
    // random biases so relu kinks are not hit at exactly zero
    let mut params = net.params();
    let mut r = rng::stream(case, "fd-mlp", &[]);
    for p in params.iter_mut() {
        *p += 0.1 * r.sample::<f64, _>(StandardNormal);
    }
    net.set_params(&params).unwrap();
    let n = 6;
    let x = gaussian(n, sizes[0], case + 1000);
    let u = gaussian(n, *sizes.last().unwrap(), case + 2000);
    let loss = |net: &Mlp, x: &Matrix| {
        let out = net.forward(x.as_ref()).unwrap();
        (0..out.nrows())
            .flat_map(|i| (0..out.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| out[(i, j)] * u[(i, j)])
            .sum::<f64>()
    };
    net.forward_train(x.as_ref(), None).unwrap();
    let grads = net.backward(u.as_ref()).unwrap();
    let fd_params = central_diff(&params, 1e-5, |p| {
        let mut probe = net.clone();
        probe.set_params(p).unwrap();
        loss(&probe, &x)
    });
    let fd_input = central_diff(&flatten(&x), 1e-5, |p| loss(&net, &unflatten(p, n, sizes[0])));
    relative_error(&grads.flat(), &fd_params).max(relative_error(&flatten(&grads.input), &fd_input))
}
