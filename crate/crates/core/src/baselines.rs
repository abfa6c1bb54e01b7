//! Reference dependence measures: the Pearson proxy, distance correlation
//! and the neural Rényi correlation.

use std::fmt;
use std::str::FromStr;

use faer::MatRef;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cca::{self, Ridge};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::nn::{Activation, Mlp, Optimizer};
use crate::rng;
use crate::slicing::{self, PolyConfig, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Pearson,
    Dcorr,
    NeuralRenyi,
    Slice,
}

impl ScoreMethod {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Pearson => "pearson",
            ScoreMethod::Dcorr => "dcorr",
            ScoreMethod::NeuralRenyi => "neural_renyi",
            ScoreMethod::Slice => "slice",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(ScoreMethod::Pearson),
            "dcorr" => Ok(ScoreMethod::Dcorr),
            "neural_renyi" | "renyi" => Ok(ScoreMethod::NeuralRenyi),
            "slice" => Ok(ScoreMethod::Slice),
            other => Err(Error::invalid_argument(format!("unknown dependence measure '{other}'"))),
        }
    }
}

/// Method-specific diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreDetails {
    Pearson {
        /// `|ρ(Z_d, T_k)|`, row-major over `(d, k)`.
        pair_correlations: Vec<f64>,
        zero_variance_pairs: usize,
    },
    Dcorr {
        dcov2: f64,
        dvar2_z: f64,
        dvar2_t: f64,
        degenerate: bool,
    },
    NeuralRenyi {
        train_curve: Vec<f64>,
        validation_curve: Vec<f64>,
        best_epoch: usize,
    },
    Slice {
        slices: usize,
        regularized_rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceScore {
    pub method: ScoreMethod,
    pub value: f64,
    pub details: ScoreDetails,
}

fn check_pair(z: MatRef<'_, f64>, t: MatRef<'_, f64>) -> Result<()> {
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
    Ok(())
}

/// Mean absolute Pearson correlation over all coordinate pairs.
pub fn pearson_proxy(z: MatRef<'_, f64>, t: MatRef<'_, f64>) -> Result<DependenceScore> {
    check_pair(z, t)?;
    let (dz, dt) = (z.ncols(), t.ncols());
    let mut pairs = Vec::with_capacity(dz * dt);
    let mut zero_variance_pairs = 0;
    for d in 0..dz {
        let zc: Vec<f64> = z.col(d).iter().copied().collect();
        for k in 0..dt {
            let tc: Vec<f64> = t.col(k).iter().copied().collect();
            match linalg::pearson(&zc, &tc) {
                Some(r) => pairs.push(r.abs()),
                None => {
                    zero_variance_pairs += 1;
                    pairs.push(0.0);
                }
            }
        }
    }
    let value = pairs.iter().sum::<f64>() / pairs.len().max(1) as f64;
    Ok(DependenceScore {
        method: ScoreMethod::Pearson,
        value,
        details: ScoreDetails::Pearson {
            pair_correlations: pairs,
            zero_variance_pairs,
        },
    })
}

fn rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn distance_row_means(x: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(&x[i], &x[j]);
            sums[i] += d;
            sums[j] += d;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let grand = means.iter().sum::<f64>() / n as f64;
    (means, grand)
}

/// Sample distance correlation (biased V-statistic form).
///
/// Works in `O(n)` memory by recomputing distances instead of storing the
/// doubly-centered matrices.
pub fn distance_correlation(z: MatRef<'_, f64>, t: MatRef<'_, f64>) -> Result<DependenceScore> {
    check_pair(z, t)?;
    let (zr, tr) = (rows(z), rows(t));
    let n = zr.len();
    let (za, zg) = distance_row_means(&zr);
    let (ta, tg) = distance_row_means(&tr);
    let (mut cov, mut vz, mut vt) = (0.0, 0.0, 0.0);
    for i in 0..n {
        // diagonal: a_ii = 0
        let a = -2.0 * za[i] + zg;
        let b = -2.0 * ta[i] + tg;
        cov += a * b;
        vz += a * a;
        vt += b * b;
        for j in (i + 1)..n {
            let a = dist(&zr[i], &zr[j]) - za[i] - za[j] + zg;
            let b = dist(&tr[i], &tr[j]) - ta[i] - ta[j] + tg;
            cov += 2.0 * a * b;
            vz += 2.0 * a * a;
            vt += 2.0 * b * b;
        }
    }
    let nn = (n * n) as f64;
    let (dcov2, dvar2_z, dvar2_t) = (cov / nn, vz / nn, vt / nn);
    let denom = (dvar2_z * dvar2_t).sqrt();
    let degenerate = !(denom > 0.0);
    let value = if degenerate {
        0.0
    } else {
        (dcov2.max(0.0) / denom).sqrt().min(1.0)
    };
    Ok(DependenceScore {
        method: ScoreMethod::Dcorr,
        value,
        details: ScoreDetails::Dcorr {
            dcov2,
            dvar2_z,
            dvar2_t,
            degenerate,
        },
    })
}

/// In-sample ŜI with freshly drawn slices, wrapped as a score.
pub fn slice_score(
    z: MatRef<'_, f64>,
    t: MatRef<'_, f64>,
    slices: usize,
    poly: PolyConfig,
    ridge: Ridge,
    seed: u64,
) -> Result<DependenceScore> {
    check_pair(z, t)?;
    let set = slicing::sample_slices(slices, z.ncols(), t.ncols(), seed)?;
    let est = cca::estimate_si(z, t, set, poly, ridge)?;
    Ok(DependenceScore {
        method: ScoreMethod::Slice,
        value: est.statistic,
        details: ScoreDetails::Slice {
            slices,
            regularized_rho: est.solution.regularized_rho,
        },
    })
}

/// Training settings for the two evaluator networks of the Rényi
/// correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenyiConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RenyiConfig {
    fn default() -> Self {
        RenyiConfig {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            dropout: 0.2,
            validation_fraction: 0.2,
            patience: 10,
            max_epochs: 500,
            batch_size: 256,
            learning_rate: 1e-3,
        }
    }
}

/// Trained `h`, `g` pair with the input scaling learned on its training
/// split.
#[derive(Debug, Clone)]
pub struct RenyiEvaluator {
    pub h: Mlp,
    pub g: Mlp,
    pub z_scaler: Standardizer,
    pub t_scaler: Standardizer,
}

impl RenyiEvaluator {
    /// Signed `ρ(h(Z), g(T))` on a batch (zero when either output is
    /// constant).
    pub fn correlation(&self, z: MatRef<'_, f64>, t: MatRef<'_, f64>) -> Result<f64> {
        check_pair(z, t)?;
        let a = self.h.forward(self.z_scaler.apply(z)?.as_ref())?;
        let b = self.g.forward(self.t_scaler.apply(t)?.as_ref())?;
        Ok(linalg::pearson(a.col_as_slice(0), b.col_as_slice(0)).unwrap_or(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct RenyiFit {
    pub evaluator: RenyiEvaluator,
    pub score: DependenceScore,
    pub epochs_run: usize,
}

/// Trains `h: R^D → R` and `g: R^d → R` to maximize `ρ(h(Z), g(T))` with
/// early stopping on a held-out split.
pub fn fit_neural_renyi(z: MatRef<'_, f64>, t: MatRef<'_, f64>, cfg: &RenyiConfig, seed: u64) -> Result<RenyiFit> {
    check_pair(z, t)?;
    if !(0.0..1.0).contains(&cfg.validation_fraction) || cfg.batch_size < 2 || cfg.max_epochs == 0 {
        return Err(Error::invalid_argument("invalid neural Rényi configuration"));
    }
    let n = z.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "renyi/split", &[]));
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(2, n.saturating_sub(2).max(2));
    if n < n_val + 2 {
        return Err(Error::InsufficientData { needed: n_val + 2, got: n });
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let z_train = linalg::select_rows(z, &train_idx);
    let t_train = linalg::select_rows(t, &train_idx);
    let z_scaler = Standardizer::fit(z_train.as_ref())?;
    let t_scaler = Standardizer::fit(t_train.as_ref())?;
    let zs = z_scaler.apply(z)?;
    let ts = t_scaler.apply(t)?;
    let z_val = linalg::select_rows(zs.as_ref(), val_idx);
    let t_val = linalg::select_rows(ts.as_ref(), val_idx);

    let mut h = Mlp::with_hidden(
        z.ncols(),
        &cfg.hidden,
        1,
        cfg.activation,
        Activation::Identity,
        cfg.dropout,
        rng::derive(seed, "renyi/h", &[]),
    )?;
    let mut g = Mlp::with_hidden(
        t.ncols(),
        &cfg.hidden,
        1,
        cfg.activation,
        Activation::Identity,
        cfg.dropout,
        rng::derive(seed, "renyi/g", &[]),
    )?;
    let mut opt_h = Optimizer::adam(cfg.learning_rate);
    let mut opt_g = Optimizer::adam(cfg.learning_rate);
    let mut shuffle_rng = rng::stream(seed, "renyi/batches", &[]);
    let mut dropout_rng = rng::stream(seed, "renyi/dropout", &[]);

    let validate = |h: &Mlp, g: &Mlp| -> Result<f64> {
        let a = h.forward(z_val.as_ref())?;
        let b = g.forward(t_val.as_ref())?;
        Ok(linalg::pearson(a.col_as_slice(0), b.col_as_slice(0)).unwrap_or(0.0))
    };

    let mut best = (validate(&h, &g)?, 0usize, h.params(), g.params());
    let mut train_curve = Vec::new();
    let mut validation_curve = Vec::new();
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut epoch_rho = 0.0;
        let mut batches = 0usize;
        for batch in batch_ranges(train_idx.len(), cfg.batch_size) {
            let idx = &train_idx[batch];
            let zb = linalg::select_rows(zs.as_ref(), idx);
            let tb = linalg::select_rows(ts.as_ref(), idx);
            let a = h.forward_train(zb.as_ref(), Some(&mut dropout_rng))?;
            let b = g.forward_train(tb.as_ref(), Some(&mut dropout_rng))?;
            let (a, b) = (a.col_as_slice(0), b.col_as_slice(0));
            let (Some((rho, da)), Some((_, db))) = (linalg::pearson_grad(a, b), linalg::pearson_grad(b, a)) else {
                continue;
            };
            // ascend ρ: upstream is −∂ρ
            let up_a = Matrix::from_fn(da.len(), 1, |i, _| -da[i]);
            let up_b = Matrix::from_fn(db.len(), 1, |i, _| -db[i]);
            let gh = h.backward(up_a.as_ref())?;
            let gg = g.backward(up_b.as_ref())?;
            opt_h
                .step(&mut h, &gh)
                .map_err(|e| Error::TrainingDiverged(format!("neural Rényi h, epoch {epoch}: {e}")))?;
            opt_g
                .step(&mut g, &gg)
                .map_err(|e| Error::TrainingDiverged(format!("neural Rényi g, epoch {epoch}: {e}")))?;
            epoch_rho += rho;
            batches += 1;
        }
        epochs_run = epoch;
        train_curve.push(if batches > 0 { epoch_rho / batches as f64 } else { 0.0 });
        let val = validate(&h, &g)?;
        validation_curve.push(val);
        if val > best.0 {
            best = (val, epoch, h.params(), g.params());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    h.set_params(&best.2)?;
    g.set_params(&best.3)?;
    h.clear_cache();
    g.clear_cache();
    Ok(RenyiFit {
        evaluator: RenyiEvaluator {
            h,
            g,
            z_scaler,
            t_scaler,
        },
        score: DependenceScore {
            method: ScoreMethod::NeuralRenyi,
            value: best.0.clamp(0.0, 1.0),
            details: ScoreDetails::NeuralRenyi {
                train_curve,
                validation_curve,
                best_epoch: best.1,
            },
        },
        epochs_run,
    })
}

pub fn neural_renyi(z: MatRef<'_, f64>, t: MatRef<'_, f64>, cfg: &RenyiConfig, seed: u64) -> Result<DependenceScore> {
    fit_neural_renyi(z, t, cfg, seed).map(|f| f.score)
}

/// Contiguous minibatch ranges; a trailing batch smaller than 2 rows is
/// merged into its predecessor.
pub(crate) fn batch_ranges(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + batch).min(n);
        if n - end < 2 {
            end = n;
        }
        out.push(start..end);
        start = end;
    }
    out
}

/// Convenience for callers holding owned matrices.
pub fn score(method: ScoreMethod, z: &Matrix, t: &Matrix, seed: u64) -> Result<DependenceScore> {
    match method {
        ScoreMethod::Pearson => pearson_proxy(z.as_ref(), t.as_ref()),
        ScoreMethod::Dcorr => distance_correlation(z.as_ref(), t.as_ref()),
        ScoreMethod::NeuralRenyi => neural_renyi(z.as_ref(), t.as_ref(), &RenyiConfig::default(), seed),
        ScoreMethod::Slice => slice_score(z.as_ref(), t.as_ref(), 200, PolyConfig::default(), Ridge::default(), seed),
    }
}
