//! Joint canonical correlation over all slices and the ŜI statistic built
//! on it.
//!
//! Fitting ([`estimate_si`]) z-scores both samples, expands them into
//! `tanh` polynomial features on every slice and solves one CCA problem
//! between the two concatenated feature vectors. The fitted weights are then
//! frozen: [`evaluate_si`] and [`si_gradient`] reuse them on other batches,
//! which is how the min-step of the training loop consumes them.
//!
//! Evaluation batches are z-scored with their own mean and spread. This
//! makes the statistic invariant to per-dimension affine reparametrizations
//! of either input, so an encoder cannot lower its penalty by shifting or
//! rescaling its output.

use faer::linalg::triangular_solve;
use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::slicing::{self, PolyConfig, SliceSet, Standardizer};

/// Eigenvalues of a covariance below this fraction of the largest one are
/// dropped during whitening.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Regularization added to the diagonal of each covariance block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    /// Multiple of the mean diagonal of the covariance being regularized.
    Relative(f64),
    /// Fixed value.
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

impl Ridge {
    fn resolve(self, cov: &Matrix) -> Result<f64> {
        let value = match self {
            Ridge::Relative(r) => {
                let p = cov.nrows().max(1) as f64;
                let trace: f64 = (0..cov.nrows()).map(|i| cov[(i, i)]).sum();
                r * trace / p
            }
            Ridge::Absolute(r) => r,
        };
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::invalid_argument(format!("ridge must be >= 0, got {value}")));
        }
        Ok(value)
    }
}

/// Top canonical pair of two feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaSolution {
    /// Weights on the `Z`-side features.
    pub w: Vec<f64>,
    /// Weights on the `T`-side features.
    pub v: Vec<f64>,
    /// Pearson correlation of `Zf·w` and `Tf·v` on the fitting sample,
    /// clamped to `[0, 1]`.
    pub rho: f64,
    /// Leading singular value of the whitened cross-covariance (the
    /// regularized canonical correlation).
    pub regularized_rho: f64,
    pub z_feature_mean: Vec<f64>,
    pub t_feature_mean: Vec<f64>,
    pub ridge_z: f64,
    pub ridge_t: f64,
}

/// Solves `sup_{w,v} ρ(Zf·w, Tf·v)`.
pub fn solve_cca(zf: MatRef<'_, f64>, tf: MatRef<'_, f64>, ridge: Ridge) -> Result<CcaSolution> {
    let n = zf.nrows();
    if tf.nrows() != n {
        return Err(Error::invalid_argument(format!(
            "row counts differ: {} vs {}",
            n,
            tf.nrows()
        )));
    }
    solve_owned(zf.to_owned(), tf.to_owned(), ridge)
}

/// [`solve_cca`] centring the feature matrices in place.
fn solve_owned(mut zc: Matrix, mut tc: Matrix, ridge: Ridge) -> Result<CcaSolution> {
    let n = zc.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let z_mean = linalg::column_means(zc.as_ref());
    let t_mean = linalg::column_means(tc.as_ref());
    linalg::center_in_place(&mut zc, &z_mean);
    linalg::center_in_place(&mut tc, &t_mean);

    let scale = 1.0 / (n as f64 - 1.0);
    let mut czz = linalg::gram(zc.as_ref()) * faer::Scale(scale);
    let mut ctt = linalg::gram(tc.as_ref()) * faer::Scale(scale);
    let czt = linalg::mul_tn(zc.as_ref(), tc.as_ref()) * faer::Scale(scale);
    if !(linalg::all_finite(czz.as_ref()) && linalg::all_finite(ctt.as_ref()) && linalg::all_finite(czt.as_ref())) {
        return Err(Error::invalid_data("non-finite covariance"));
    }
    let ridge_z = ridge.resolve(&czz)?;
    let ridge_t = ridge.resolve(&ctt)?;
    for i in 0..czz.nrows() {
        czz[(i, i)] += ridge_z;
    }
    for i in 0..ctt.nrows() {
        ctt[(i, i)] += ridge_t;
    }

    let wz = Whitening::new(&czz, ridge_z)?;
    let wt = Whitening::new(&ctt, ridge_t)?;
    let half = wt.apply(czt.transpose().to_owned());
    let m = wz.apply(half.transpose().to_owned());
    let (sigma, u, vd) = linalg::top_singular_pair(m.as_ref())?;
    let w = wz.back(&u);
    let mut v = wt.back(&vd);

    let a = linalg::mat_vec(zc.as_ref(), &w);
    let b = linalg::mat_vec(tc.as_ref(), &v);
    let mut rho = linalg::pearson(&a, &b).unwrap_or(0.0);
    if rho < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
        rho = -rho;
    }
    Ok(CcaSolution {
        w,
        v,
        rho: rho.clamp(0.0, 1.0),
        regularized_rho: sigma,
        z_feature_mean: z_mean,
        t_feature_mean: t_mean,
        ridge_z,
        ridge_t,
    })
}

/// A factor `W` with `W C Wᵀ = I` on the retained directions of a covariance `C`.
enum Whitening {
    /// Lower Cholesky factor `L`, with `W = L⁻¹`.
    Cholesky(Matrix),
    /// `W = C^{-1/2}` with null directions dropped.
    Symmetric(Matrix),
}

impl Whitening {
    /// Cholesky when the ridge alone keeps every eigenvalue above the floor,
    /// so both factorizations whiten the same subspace.
    fn new(c: &Matrix, ridge: f64) -> Result<Self> {
        let trace: f64 = (0..c.nrows()).map(|i| c[(i, i)]).sum();
        if ridge > EIGEN_FLOOR * trace {
            if let Ok(llt) = c.llt(faer::Side::Lower) {
                return Ok(Self::Cholesky(llt.L().to_owned()));
            }
        }
        Ok(Self::Symmetric(linalg::sym_inv_sqrt(c.as_ref(), EIGEN_FLOOR)?))
    }

    /// `W · m`
    fn apply(&self, mut m: Matrix) -> Matrix {
        match self {
            Self::Cholesky(l) => {
                triangular_solve::solve_lower_triangular_in_place(l.as_ref(), m.as_mut(), faer::Par::Seq);
                m
            }
            Self::Symmetric(w) => linalg::mul(w.as_ref(), m.as_ref()),
        }
    }

    /// `Wᵀ · x`
    fn back(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Cholesky(l) => {
                let mut col = linalg::column(x);
                triangular_solve::solve_upper_triangular_in_place(l.transpose(), col.as_mut(), faer::Par::Seq);
                col.col_as_slice(0).to_vec()
            }
            Self::Symmetric(w) => linalg::mat_vec(w.as_ref(), x),
        }
    }
}

/// A fitted ŜI statistic: slices, feature order and the frozen CCA weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SiEstimate {
    /// In-sample ŜI, equal to `solution.rho`.
    pub statistic: f64,
    pub solution: CcaSolution,
    pub slices: SliceSet,
    pub poly: PolyConfig,
    /// z-scoring parameters of the fitting sample.
    pub z_scaler: Standardizer,
    pub t_scaler: Standardizer,
}

impl SiEstimate {
    pub fn z_dim(&self) -> usize {
        self.slices.z_dim()
    }

    pub fn t_dim(&self) -> usize {
        self.slices.t_dim()
    }
}

fn check_pair(z: MatRef<'_, f64>, t: MatRef<'_, f64>, slices: &SliceSet) -> Result<()> {
    if z.nrows() != t.nrows() {
        return Err(Error::invalid_argument(format!(
            "Z and T are not row-aligned ({} vs {})",
            z.nrows(),
            t.nrows()
        )));
    }
    if z.nrows() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: z.nrows() });
    }
    if z.ncols() != slices.z_dim() || t.ncols() != slices.t_dim() {
        return Err(Error::invalid_argument(format!(
            "data dims ({}, {}) do not match slice dims ({}, {})",
            z.ncols(),
            t.ncols(),
            slices.z_dim(),
            slices.t_dim()
        )));
    }
    Ok(())
}

/// Fits ŜI on `(Z, T)`: z-scoring, features on both sides, joint CCA.
pub fn estimate_si(
    z: MatRef<'_, f64>,
    t: MatRef<'_, f64>,
    slices: SliceSet,
    poly: PolyConfig,
    ridge: Ridge,
) -> Result<SiEstimate> {
    check_pair(z, t, &slices)?;
    let z_scaler = Standardizer::fit(z)?;
    let t_scaler = Standardizer::fit(t)?;
    let zf = slicing::feature_map(z_scaler.apply(z)?.as_ref(), slices.theta.as_ref(), &poly)?;
    let tf = slicing::feature_map(t_scaler.apply(t)?.as_ref(), slices.phi.as_ref(), &poly)?;
    let solution = solve_owned(zf, tf, ridge)?;
    Ok(SiEstimate {
        statistic: solution.rho,
        solution,
        slices,
        poly,
        z_scaler,
        t_scaler,
    })
}

/// One side of a fitted statistic evaluated on a batch, with everything the
/// backward pass needs.
struct SideForward {
    scaler: Standardizer,
    standardized: Matrix,
    tanh: Matrix,
    score: Vec<f64>,
}

fn side_forward(x: MatRef<'_, f64>, slices: MatRef<'_, f64>, weights: &[f64], order: usize) -> Result<SideForward> {
    if !linalg::all_finite(x) {
        return Err(Error::invalid_data("non-finite values in batch"));
    }
    let scaler = Standardizer::fit(x)?;
    let standardized = scaler.apply(x)?;
    let proj = slicing::project(standardized.as_ref(), slices)?;
    let features = slicing::expand(&proj, order);
    let score = linalg::mat_vec(features.as_ref(), weights);
    let tanh = Matrix::from_fn(proj.nrows(), proj.ncols(), |i, j| features[(i, j * order)]);
    Ok(SideForward {
        scaler,
        standardized,
        tanh,
        score,
    })
}

/// `∂score/∂(θᵢᵀx̃)` scaled by the upstream `∂ρ/∂score`, as an `m × S`
/// matrix.
fn projection_sensitivity(side: &SideForward, weights: &[f64], order: usize, upstream: &[f64]) -> Matrix {
    let (m, s) = (side.tanh.nrows(), side.tanh.ncols());
    Matrix::from_fn(m, s, |r, i| {
        let t = side.tanh[(r, i)];
        let mut dpoly = 0.0;
        let mut pow = 1.0; // t^(k-1)
        for k in 1..=order {
            dpoly += weights[i * order + k - 1] * k as f64 * pow;
            pow *= t;
        }
        upstream[r] * dpoly * (1.0 - t * t)
    })
}

/// Backpropagates `∂ρ/∂x̃` through per-batch z-scoring.
fn through_standardization(side: &SideForward, grad_std: &Matrix) -> Matrix {
    let (m, d) = (grad_std.nrows(), grad_std.ncols());
    let mf = m as f64;
    let mut out = Matrix::zeros(m, d);
    for j in 0..d {
        let g = grad_std.col_as_slice(j);
        let xs = side.standardized.col_as_slice(j);
        let sigma = side.scaler.scale[j];
        let mean_g = g.iter().sum::<f64>() / mf;
        let mean_gx = if side.scaler.floored[j] {
            0.0
        } else {
            g.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() / mf
        };
        for (r, o) in out.col_as_slice_mut(j).iter_mut().enumerate() {
            *o = (g[r] - mean_g - xs[r] * mean_gx) / sigma;
        }
    }
    out
}

fn check_fitted(z: MatRef<'_, f64>, t: MatRef<'_, f64>, fitted: &SiEstimate) -> Result<()> {
    check_pair(z, t, &fitted.slices)
}

/// ŜI of a new batch under frozen weights: the Pearson correlation of the two
/// scalar projections (signed; zero when either projection is constant).
pub fn evaluate_si(z: MatRef<'_, f64>, t: MatRef<'_, f64>, fitted: &SiEstimate) -> Result<f64> {
    check_fitted(z, t, fitted)?;
    let order = fitted.poly.order;
    let zs = side_forward(z, fitted.slices.theta.as_ref(), &fitted.solution.w, order)?;
    let ts = side_forward(t, fitted.slices.phi.as_ref(), &fitted.solution.v, order)?;
    Ok(linalg::pearson(&zs.score, &ts.score).unwrap_or(0.0))
}

/// Batch ŜI together with its gradient with respect to the `Z` batch.
#[derive(Debug, Clone)]
pub struct SiGradient {
    /// Signed batch correlation under the frozen weights.
    pub value: f64,
    /// `∂ŜI/∂Z`, same shape as the batch.
    pub grad: Matrix,
    /// Set when either projection has zero variance; `grad` is zero then.
    pub degenerate: bool,
}

/// Exact gradient of [`evaluate_si`] with respect to every entry of `Z`.
///
/// The CCA weights are constants here; `T` is data and gets no gradient.
pub fn si_gradient(z: MatRef<'_, f64>, t: MatRef<'_, f64>, fitted: &SiEstimate) -> Result<SiGradient> {
    check_fitted(z, t, fitted)?;
    let order = fitted.poly.order;
    let w = &fitted.solution.w;
    let zs = side_forward(z, fitted.slices.theta.as_ref(), w, order)?;
    let ts = side_forward(t, fitted.slices.phi.as_ref(), &fitted.solution.v, order)?;
    let Some((value, d_score)) = linalg::pearson_grad(&zs.score, &ts.score) else {
        return Ok(SiGradient {
            value: 0.0,
            grad: Matrix::zeros(z.nrows(), z.ncols()),
            degenerate: true,
        });
    };
    let sens = projection_sensitivity(&zs, w, order, &d_score);
    let grad_std = linalg::mul(sens.as_ref(), fitted.slices.theta.as_ref());
    Ok(SiGradient {
        value,
        grad: through_standardization(&zs, &grad_std),
        degenerate: false,
    })
}

/// Gradient of the batch ŜI with respect to the slice directions, weights
/// held fixed. Returns `(value, ∂/∂Θ, ∂/∂Φ)`, or `None` when degenerate.
pub fn slice_gradient(
    z: MatRef<'_, f64>,
    t: MatRef<'_, f64>,
    fitted: &SiEstimate,
) -> Result<Option<(f64, Matrix, Matrix)>> {
    check_fitted(z, t, fitted)?;
    let order = fitted.poly.order;
    let (w, v) = (&fitted.solution.w, &fitted.solution.v);
    let zs = side_forward(z, fitted.slices.theta.as_ref(), w, order)?;
    let ts = side_forward(t, fitted.slices.phi.as_ref(), v, order)?;
    let Some((value, d_a)) = linalg::pearson_grad(&zs.score, &ts.score) else {
        return Ok(None);
    };
    let Some((_, d_b)) = linalg::pearson_grad(&ts.score, &zs.score) else {
        return Ok(None);
    };
    let sens_z = projection_sensitivity(&zs, w, order, &d_a);
    let sens_t = projection_sensitivity(&ts, v, order, &d_b);
    let d_theta = linalg::mul_tn(sens_z.as_ref(), zs.standardized.as_ref());
    let d_phi = linalg::mul_tn(sens_t.as_ref(), ts.standardized.as_ref());
    Ok(Some((value, d_theta, d_phi)))
}
