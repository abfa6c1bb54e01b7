//! Fixtures shared by the benchmarks.

use rand::Rng as _;
use rand_distr::StandardNormal;
use slice_infomin::{rng, Matrix};

/// `n × d` standard normal matrix.
pub fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, "bench/gaussian", &[]);
    Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal))
}

/// `(Z, T)` with `T` a noisy nonlinear function of two `Z` coordinates.
pub fn dependent_pair(n: usize, z_dim: usize, t_dim: usize, seed: u64) -> (Matrix, Matrix) {
    let z = gaussian(n, z_dim, seed);
    let e = gaussian(n, t_dim, seed ^ 0x5EED);
    let t = Matrix::from_fn(n, t_dim, |i, j| {
        let a = z[(i, j % z_dim)] + z[(i, (j + 1) % z_dim)];
        a.sin() + 0.5 * e[(i, j)]
    });
    (z, t)
}
