//! Random slices and the bounded polynomial features built on them.

use faer::MatRef;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Rng};

/// Variance floor used when z-scoring constant columns.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Projection directions for both sides of a dependence query.
///
/// `theta` holds one unit-norm direction per row for the `Z` side (`S × D`),
/// `phi` the same for the `T` side (`S × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSet {
    pub theta: Matrix,
    pub phi: Matrix,
    pub seed: u64,
}

impl SliceSet {
    /// Builds a slice set from arbitrary directions, normalizing every row.
    pub fn from_directions(theta: Matrix, phi: Matrix, seed: u64) -> Result<Self> {
        if theta.nrows() == 0 || theta.nrows() != phi.nrows() {
            return Err(Error::invalid_argument(format!(
                "slice counts must be equal and positive (theta {}, phi {})",
                theta.nrows(),
                phi.nrows()
            )));
        }
        if theta.ncols() == 0 || phi.ncols() == 0 {
            return Err(Error::invalid_argument("slice dimension must be positive"));
        }
        let mut set = SliceSet { theta, phi, seed };
        normalize_rows(&mut set.theta)?;
        normalize_rows(&mut set.phi)?;
        Ok(set)
    }

    pub fn count(&self) -> usize {
        self.theta.nrows()
    }

    pub fn z_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn t_dim(&self) -> usize {
        self.phi.ncols()
    }

    /// The same directions with the roles of the two sides exchanged.
    pub fn swapped(&self) -> SliceSet {
        SliceSet {
            theta: self.phi.clone(),
            phi: self.theta.clone(),
            seed: self.seed,
        }
    }
}

/// Order of the `tanh` polynomial expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyConfig {
    pub order: usize,
}

impl Default for PolyConfig {
    fn default() -> Self {
        PolyConfig { order: 3 }
    }
}

impl PolyConfig {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid_argument("polynomial order must be >= 1"));
        }
        Ok(PolyConfig { order })
    }
}

/// Samples `count` slices per side, i.i.d. uniform on `S^{z_dim-1}` and
/// `S^{t_dim-1}`.
pub fn sample_slices(count: usize, z_dim: usize, t_dim: usize, seed: u64) -> Result<SliceSet> {
    if count == 0 || z_dim == 0 || t_dim == 0 {
        return Err(Error::invalid_argument(format!(
            "slices need positive count and dimensions (S={count}, D={z_dim}, d={t_dim})"
        )));
    }
    let mut rng_z = rng::stream(seed, "slices/theta", &[]);
    let mut rng_t = rng::stream(seed, "slices/phi", &[]);
    Ok(SliceSet {
        theta: sample_sphere(count, z_dim, &mut rng_z),
        phi: sample_sphere(count, t_dim, &mut rng_t),
        seed,
    })
}

/// Rows drawn uniformly from the unit sphere in `dim` dimensions
/// (normalized standard normal vectors).
pub fn sample_sphere(count: usize, dim: usize, rng: &mut Rng) -> Matrix {
    let mut out = Matrix::zeros(count, dim);
    let mut row = vec![0.0; dim];
    for i in 0..count {
        let norm = loop {
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        for (j, x) in row.iter().enumerate() {
            out[(i, j)] = x / norm;
        }
    }
    out
}

pub(crate) fn normalize_rows(m: &mut Matrix) -> Result<()> {
    for i in 0..m.nrows() {
        let norm = (0..m.ncols()).map(|j| m[(i, j)].powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid_data(format!(
                "slice row {i} has norm {norm}"
            )));
        }
        for j in 0..m.ncols() {
            m[(i, j)] /= norm;
        }
    }
    Ok(())
}

/// Projects every sample onto every slice: `out[r, i] = θᵢᵀ x_r`.
///
/// Accumulates dimensions in index order starting from `+0.0`, so appending
/// zero dimensions to both inputs leaves the result bit-identical.
pub fn project(x: MatRef<'_, f64>, slices: MatRef<'_, f64>) -> Result<Matrix> {
    if x.ncols() != slices.ncols() {
        return Err(Error::invalid_argument(format!(
            "sample dimension {} does not match slice dimension {}",
            x.ncols(),
            slices.ncols()
        )));
    }
    Ok(crate::linalg::mul_nt(x, slices))
}

/// Expands projected samples into `tanh(θᵢᵀx)^k` for `k = 1..=K`.
///
/// Output is `n × (K·S)` with column `i·K + (k−1)` holding slice `i`, power
/// `k`. The constant term is not emitted: it vanishes under centering.
pub fn feature_map(x: MatRef<'_, f64>, slices: MatRef<'_, f64>, cfg: &PolyConfig) -> Result<Matrix> {
    if !crate::linalg::all_finite(x) {
        return Err(Error::invalid_data("feature_map input contains non-finite values"));
    }
    let proj = project(x, slices)?;
    Ok(expand(&proj, cfg.order))
}

pub(crate) fn expand(proj: &Matrix, order: usize) -> Matrix {
    let (n, s) = (proj.nrows(), proj.ncols());
    let mut out = Matrix::zeros(n, s * order);
    let mut base = vec![0.0; n];
    let mut power = vec![0.0; n];
    for i in 0..s {
        for (b, u) in base.iter_mut().zip(proj.col_as_slice(i)) {
            *b = u.tanh();
        }
        power.copy_from_slice(&base);
        out.col_as_slice_mut(i * order).copy_from_slice(&power);
        for k in 1..order {
            for (p, b) in power.iter_mut().zip(&base) {
                *p *= b;
            }
            out.col_as_slice_mut(i * order + k).copy_from_slice(&power);
        }
    }
    out
}

/// Per-dimension z-scoring fitted on one sample and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dimensions whose variance fell under [`VARIANCE_FLOOR`].
    pub floored: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: MatRef<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        let mut floored = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col = x.col(j);
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            if !var.is_finite() {
                return Err(Error::invalid_data(format!("column {j} has non-finite variance")));
            }
            mean.push(mu);
            floored.push(var < VARIANCE_FLOOR);
            scale.push(var.max(VARIANCE_FLOOR).sqrt());
        }
        Ok(Standardizer { mean, scale, floored })
    }

    /// Identity transform for `dim` dimensions.
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            floored: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: MatRef<'_, f64>) -> Result<Matrix> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid_argument(format!(
                "expected {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }
}
