//! Dense matrix helpers shared by the estimators.
//!
//! Everything runs sequentially so that results are bit-reproducible for a
//! fixed seed regardless of the machine's core count.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Column-major `f64` matrix; rows are samples, columns are dimensions.
pub type Matrix = Mat<f64>;

/// `a · b`
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

/// `aᵀ · b`
pub fn mul_tn(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Matrix {
    let mut out = Matrix::zeros(a.ncols(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a.transpose(), b, 1.0, Par::Seq);
    out
}

/// `aᵀ · a`, computing one triangle and mirroring it.
pub fn gram(a: MatRef<'_, f64>) -> Matrix {
    let p = a.ncols();
    let mut out = Matrix::zeros(p, p);
    triangular::matmul(
        out.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        a.transpose(),
        BlockStructure::Rectangular,
        a,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    for j in 0..p {
        for i in 0..j {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

/// `a · bᵀ`
pub fn mul_nt(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), b.nrows());
    matmul(out.as_mut(), Accum::Replace, a, b.transpose(), 1.0, Par::Seq);
    out
}

/// Runs `f` on column `j`, copying it only when it is strided.
fn with_col<R>(m: MatRef<'_, f64>, j: usize, f: impl FnOnce(&[f64]) -> R) -> R {
    match m.col(j).try_as_col_major() {
        Some(c) => f(c.as_slice()),
        None => f(&m.col(j).iter().copied().collect::<Vec<_>>()),
    }
}

pub fn column_means(m: MatRef<'_, f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    (0..m.ncols())
        .map(|j| with_col(m, j, |c| c.iter().sum::<f64>()) / n)
        .collect()
}

/// Subtracts `means` from every row in place.
pub fn center_in_place(m: &mut Matrix, means: &[f64]) {
    for (j, &mu) in means.iter().enumerate() {
        for x in m.col_as_slice_mut(j) {
            *x -= mu;
        }
    }
}

pub fn select_rows(m: MatRef<'_, f64>, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
    let ncols = rows.first().map_or(0, Vec::len);
    Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn to_rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Column vector view of a slice as an `n × 1` matrix.
pub fn column(values: &[f64]) -> Matrix {
    Matrix::from_fn(values.len(), 1, |i, _| values[i])
}

pub fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.ncols()).all(|j| with_col(m, j, |c| c.iter().all(|x| x.is_finite())))
}

/// Inverse square root of a symmetric positive semi-definite matrix.
///
/// Eigenvalues below `rel_floor × λ_max` are treated as null directions and
/// contribute nothing to the result.
pub fn sym_inv_sqrt(c: MatRef<'_, f64>, rel_floor: f64) -> Result<Matrix> {
    let p = c.nrows();
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values = evd.S().column_vector();
    let vectors = evd.U();
    let top = (0..p).map(|i| values[i]).fold(0.0_f64, f64::max);
    let cutoff = rel_floor * top;
    let mut scaled = Matrix::zeros(p, p);
    for k in 0..p {
        let lambda = values[k];
        if lambda <= cutoff || lambda <= 0.0 {
            continue;
        }
        let s = lambda.sqrt().recip();
        for i in 0..p {
            scaled[(i, k)] = vectors[(i, k)] * s;
        }
    }
    Ok(mul_nt(scaled.as_ref(), vectors))
}

/// Leading singular value with its left and right singular vectors.
///
/// Works on the smaller of the two Gram matrices and maps the vector across.
pub fn top_singular_pair(m: MatRef<'_, f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (p, q) = (m.nrows(), m.ncols());
    let transpose = p > q;
    let a = if transpose { m.transpose() } else { m };
    let gram = mul_nt(a, a);
    let (lambda, left) = top_eigenpair(&gram)?;
    let sigma = lambda.max(0.0).sqrt();
    let mut right = vec![0.0; a.ncols()];
    if sigma > 0.0 {
        for (j, r) in right.iter_mut().enumerate() {
            let dot: f64 = (0..a.nrows()).map(|i| a[(i, j)] * left[i]).sum();
            *r = dot / sigma;
        }
    }
    Ok(if transpose {
        (sigma, right, left)
    } else {
        (sigma, left, right)
    })
}

/// Largest eigenvalue of a symmetric PSD matrix and a unit eigenvector.
///
/// The vector comes from inverse iteration just above the eigenvalue, where
/// `σI − g` is positive definite; a full decomposition is the fallback.
fn top_eigenpair(g: &Matrix) -> Result<(f64, Vec<f64>)> {
    let p = g.nrows();
    if let Some(lambda) = lanczos_top(g) {
        if let Some(x) = inverse_iteration(g, lambda) {
            return Ok((lambda, x));
        }
    }
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let k = p - 1;
    Ok((evd.S().column_vector()[k], evd.U().col(k).iter().copied().collect()))
}

/// Largest Ritz value of a Lanczos run with full reorthogonalization,
/// once its residual bound drops below `1e-12` relative.
fn lanczos_top(g: &Matrix) -> Option<f64> {
    let p = g.nrows();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let start: Vec<f64> = (0..p).map(|i| 1.0 + (i as f64 * 0.754_877_666_2).fract()).collect();
    let norm = start.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut q: Vec<f64> = start.iter().map(|v| v / norm).collect();
    for k in 0..p {
        let mut w = mat_vec(g.as_ref(), &q);
        alpha.push(dot(&q, &w));
        basis.push(q);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let b = dot(&w, &w).sqrt();
        let (theta, last) = top_ritz(&alpha, &beta)?;
        if theta <= 0.0 {
            return None;
        }
        if b * last.abs() <= 1e-12 * theta || b <= 1e-14 * theta || k + 1 == p {
            return Some(theta);
        }
        beta.push(b);
        q = w.iter().map(|v| v / b).collect();
    }
    None
}

/// Top eigenvalue of the symmetric tridiagonal matrix with diagonal `alpha`
/// and off-diagonal `beta`, with the last entry of its eigenvector.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> Option<(f64, f64)> {
    let k = alpha.len();
    let t = Matrix::from_fn(k, k, |i, j| match i.abs_diff(j) {
        0 => alpha[i],
        1 => beta[i.min(j)],
        _ => 0.0,
    });
    let evd = t.self_adjoint_eigen(Side::Lower).ok()?;
    Some((evd.S().column_vector()[k - 1], evd.U()[(k - 1, k - 1)]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inverse_iteration(g: &Matrix, lambda: f64) -> Option<Vec<f64>> {
    use faer::linalg::solvers::Solve;
    let p = g.nrows();
    let shift = lambda * (1.0 + 1e-8);
    let shifted = Matrix::from_fn(p, p, |i, j| if i == j { shift - g[(i, j)] } else { -g[(i, j)] });
    let llt = shifted.llt(Side::Lower).ok()?;
    let mut x = Matrix::from_fn(p, 1, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    for _ in 0..4 {
        x = llt.solve(x.as_ref());
        let norm = x.col_as_slice(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        x.col_as_slice_mut(0).iter_mut().for_each(|v| *v /= norm);
    }
    let x = x.col_as_slice(0).to_vec();
    let gx = mat_vec(g.as_ref(), &x);
    let residual = gx.iter().zip(&x).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
    (residual <= 1e-9 * lambda).then_some(x)
}

/// Matrix-vector product `m · x`.
pub fn mat_vec(m: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), x.len());
    let mut out = vec![0.0; m.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        with_col(m, j, |c| {
            for (o, &mij) in out.iter_mut().zip(c) {
                *o += mij * xj;
            }
        });
    }
    out
}

/// Sample Pearson correlation, `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Gradient of the sample Pearson correlation with respect to `a`.
///
/// Returns `(ρ, ∂ρ/∂a)`, or `None` on zero variance.
pub fn pearson_grad(a: &[f64], b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ac: Vec<f64> = a.iter().map(|x| x - ma).collect();
    let bc: Vec<f64> = b.iter().map(|y| y - mb).collect();
    let saa: f64 = ac.iter().map(|x| x * x).sum();
    let sbb: f64 = bc.iter().map(|y| y * y).sum();
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    let sab: f64 = ac.iter().zip(&bc).map(|(x, y)| x * y).sum();
    let (na, nb) = (saa.sqrt(), sbb.sqrt());
    let rho = sab / (na * nb);
    let grad = ac
        .iter()
        .zip(&bc)
        .map(|(x, y)| y / (na * nb) - rho * x / saa)
        .collect();
    Some((rho, grad))
}
