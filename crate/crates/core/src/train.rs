//! Infomin training: alternate an analytic max-step (fit ŜI on a data
//! subset) with a gradient min-step on utility plus `β·ŜI`.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use faer::MatRef;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, RenyiConfig};
use crate::cca::{self, Ridge, SiEstimate};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::nn::{self, Activation, Mlp, Optimizer, OptimizerKind};
use crate::rng;
use crate::slicing::{self, PolyConfig, SliceSet};

/// Training loss attached to the prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Utility {
    RegressionMse,
    ClassificationCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub enabled: bool,
    /// Refine only when the fitted statistic is below this value.
    pub threshold: f64,
    pub step_size: f64,
    /// Between 1 and 3.
    pub steps: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            enabled: false,
            threshold: 0.1,
            step_size: 0.1,
            steps: 1,
        }
    }
}

/// Encoder and head architecture used when the caller does not supply
/// networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub z_dim: usize,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_hidden: vec![64, 64],
            z_dim: 8,
            head_hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfominConfig {
    /// Weight `β ≥ 0` of the ŜI penalty.
    pub beta: f64,
    /// Max-step subset size `N′`.
    pub n_prime: usize,
    pub iterations: usize,
    pub slices: usize,
    pub poly_order: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Max-step ridge. Much stronger than the estimator default: a fit on
    /// `N′` rows with `2·K·S` features otherwise chases noise.
    pub ridge: Ridge,
    pub refinement: RefinementConfig,
    pub utility: Utility,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for InfominConfig {
    fn default() -> Self {
        InfominConfig {
            beta: 0.0,
            n_prime: 5000,
            iterations: 1000,
            slices: 200,
            poly_order: 3,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            ridge: Ridge::Relative(1.0),
            refinement: RefinementConfig::default(),
            utility: Utility::RegressionMse,
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl InfominConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and non-negative, got {}", self.beta));
        }
        if self.n_prime < 2 || self.n_prime > rows {
            return bad(format!("n_prime must lie in [2, {rows}], got {}", self.n_prime));
        }
        if self.batch_size < 2 || self.batch_size > rows {
            return bad(format!("batch_size must lie in [2, {rows}], got {}", self.batch_size));
        }
        if self.slices == 0 || self.poly_order == 0 {
            return bad("slices and poly_order must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        let r = &self.refinement;
        if r.enabled && !(1..=3).contains(&r.steps) {
            return bad(format!("refinement steps must lie in [1, 3], got {}", r.steps));
        }
        if r.enabled && !(r.step_size >= 0.0 && r.step_size.is_finite()) {
            return bad(format!("refinement step_size must be non-negative, got {}", r.step_size));
        }
        Ok(())
    }

    pub fn poly(&self) -> Result<PolyConfig> {
        PolyConfig::new(self.poly_order)
    }
}

/// Builds a fresh encoder `R^x_dim → R^z_dim` and head `R^z_dim → R^y_dim`.
pub fn build_models(x_dim: usize, y_dim: usize, cfg: &InfominConfig) -> Result<(Mlp, Mlp)> {
    let m = &cfg.model;
    let encoder = Mlp::with_hidden(
        x_dim,
        &m.encoder_hidden,
        m.z_dim,
        m.activation,
        Activation::Identity,
        0.0,
        rng::derive(cfg.seed, "train/encoder-init", &[]),
    )?;
    let head = Mlp::with_hidden(
        m.z_dim,
        &m.head_hidden,
        y_dim,
        m.activation,
        Activation::Identity,
        0.0,
        rng::derive(cfg.seed, "train/head-init", &[]),
    )?;
    Ok((encoder, head))
}

/// One completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub utility_loss: f64,
    /// In-sample ŜI of the max-step fit; absent when the penalty is off.
    pub si_fit: Option<f64>,
    /// Batch ŜI under the frozen max-step weights.
    pub si_batch: Option<f64>,
    /// `β·max(si_batch, 0)`.
    pub penalty: f64,
    pub degenerate: bool,
    pub refined: bool,
    pub refine_skipped: bool,
    pub max_step_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Median max-step wall-clock over iterations that ran one.
    pub fn median_max_step_seconds(&self) -> Option<f64> {
        let mut t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.si_fit.is_some())
            .map(|r| r.max_step_seconds)
            .collect();
        if t.is_empty() {
            return None;
        }
        t.sort_by(f64::total_cmp);
        Some(t[t.len() / 2])
    }

    /// One row per iteration. With `timing = false` the seconds column is
    /// written as zero so files are reproducible byte for byte.
    pub fn write_csv(&self, path: &Path, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.records {
            let mut r = r.clone();
            if !timing {
                r.max_step_seconds = 0.0;
            }
            w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A training failure together with the iterations completed before it.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub history: TrainHistory,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted after {} iterations: {}", self.history.len(), self.error)
    }
}

impl std::error::Error for TrainAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Self {
        a.error
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub encoder: Mlp,
    pub head: Mlp,
    pub history: TrainHistory,
}

/// Result of a max-step.
#[derive(Debug, Clone)]
pub struct MaxStep {
    pub fitted: SiEstimate,
    pub refined: bool,
    pub refine_skipped: bool,
    pub seconds: f64,
}

/// Result of [`refine_slices`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub slices: SliceSet,
    /// Set when a gradient was non-finite or degenerate; `slices` then holds
    /// the last good iterate.
    pub skipped: bool,
}

/// Gradient ascent of the batch ŜI on the slice directions, re-solving the
/// CCA weights before every step and projecting rows back to the unit
/// sphere after it.
pub fn refine_slices(
    slices: SliceSet,
    z: MatRef<'_, f64>,
    t: MatRef<'_, f64>,
    poly: PolyConfig,
    ridge: Ridge,
    step_size: f64,
    steps: usize,
) -> Result<Refinement> {
    if !(1..=3).contains(&steps) {
        return Err(Error::invalid_argument(format!("refinement steps must lie in [1, 3], got {steps}")));
    }
    if step_size == 0.0 {
        return Ok(Refinement { slices, skipped: false });
    }
    let mut current = slices;
    for _ in 0..steps {
        let fitted = cca::estimate_si(z, t, current.clone(), poly, ridge)?;
        let Some((_, d_theta, d_phi)) = cca::slice_gradient(z, t, &fitted)? else {
            return Ok(Refinement { slices: current, skipped: true });
        };
        if !linalg::all_finite(d_theta.as_ref()) || !linalg::all_finite(d_phi.as_ref()) {
            return Ok(Refinement { slices: current, skipped: true });
        }
        let theta = &current.theta + faer::Scale(step_size) * &d_theta;
        let phi = &current.phi + faer::Scale(step_size) * &d_phi;
        current = SliceSet::from_directions(theta, phi, current.seed)?;
    }
    Ok(Refinement {
        slices: current,
        skipped: false,
    })
}

fn utility_loss(utility: Utility, pred: MatRef<'_, f64>, target: MatRef<'_, f64>) -> Result<(f64, Matrix)> {
    match utility {
        Utility::RegressionMse => nn::mse(pred, target),
        Utility::ClassificationCe => nn::softmax_cross_entropy(pred, target),
    }
}

/// Training state; exposes the two half-steps separately.
pub struct Trainer<'a> {
    data: &'a Dataset,
    cfg: InfominConfig,
    poly: PolyConfig,
    pub encoder: Mlp,
    pub head: Mlp,
    enc_opt: Optimizer,
    head_opt: Optimizer,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, encoder: Mlp, head: Mlp, cfg: &InfominConfig) -> Result<Self> {
        cfg.validate(data.rows())?;
        if encoder.input_dim() != data.x.ncols() {
            return Err(Error::invalid_argument(format!(
                "encoder expects {} inputs, data has {} features",
                encoder.input_dim(),
                data.x.ncols()
            )));
        }
        if head.input_dim() != encoder.output_dim() || head.output_dim() != data.y.ncols() {
            return Err(Error::invalid_argument(format!(
                "head is {}→{}, expected {}→{}",
                head.input_dim(),
                head.output_dim(),
                encoder.output_dim(),
                data.y.ncols()
            )));
        }
        if cfg.beta > 0.0 && data.t.ncols() == 0 {
            return Err(Error::invalid_argument("beta > 0 needs at least one protected column"));
        }
        Ok(Trainer {
            data,
            poly: cfg.poly()?,
            enc_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate),
            head_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate),
            cfg: cfg.clone(),
            encoder,
            head,
        })
    }

    fn penalty_active(&self) -> bool {
        self.cfg.beta > 0.0
    }

    /// Fits ŜI between `f(X)` and `T` on a fresh subset `D′` with fresh
    /// slices. Uses the encoder in inference mode only.
    pub fn max_step(&self, iteration: usize) -> Result<MaxStep> {
        let start = Instant::now();
        let it = iteration as u64;
        let seed = self.cfg.seed;
        let rows = index::sample(&mut rng::stream(seed, "train/subset", &[it]), self.data.rows(), self.cfg.n_prime).into_vec();
        let z = self.encoder.forward(linalg::select_rows(self.data.x.as_ref(), &rows).as_ref())?;
        let t = linalg::select_rows(self.data.t.as_ref(), &rows);
        let slices = slicing::sample_slices(
            self.cfg.slices,
            z.ncols(),
            t.ncols(),
            rng::derive(seed, "train/slices", &[it]),
        )?;
        let mut fitted = cca::estimate_si(z.as_ref(), t.as_ref(), slices, self.poly, self.cfg.ridge)?;
        let (mut refined, mut refine_skipped) = (false, false);
        let r = &self.cfg.refinement;
        if r.enabled && fitted.statistic < r.threshold {
            let out = refine_slices(
                fitted.slices.clone(),
                z.as_ref(),
                t.as_ref(),
                self.poly,
                self.cfg.ridge,
                r.step_size,
                r.steps,
            )?;
            refined = !out.skipped;
            refine_skipped = out.skipped;
            fitted = cca::estimate_si(z.as_ref(), t.as_ref(), out.slices, self.poly, self.cfg.ridge)?;
        }
        Ok(MaxStep {
            fitted,
            refined,
            refine_skipped,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// One optimizer step on encoder and head. `fitted` is read only.
    pub fn min_step(&mut self, iteration: usize, fitted: Option<&SiEstimate>) -> Result<IterationRecord> {
        let it = iteration as u64;
        let seed = self.cfg.seed;
        let rows = index::sample(&mut rng::stream(seed, "train/batch", &[it]), self.data.rows(), self.cfg.batch_size).into_vec();
        let xb = linalg::select_rows(self.data.x.as_ref(), &rows);
        let yb = linalg::select_rows(self.data.y.as_ref(), &rows);
        let mut dropout = rng::stream(seed, "train/dropout", &[it]);
        let z = self.encoder.forward_train(xb.as_ref(), Some(&mut dropout))?;
        let pred = self.head.forward_train(z.as_ref(), Some(&mut dropout))?;
        let (loss, d_pred) = utility_loss(self.cfg.utility, pred.as_ref(), yb.as_ref())?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite utility loss at iteration {iteration}")));
        }
        let head_grads = self.head.backward(d_pred.as_ref())?;
        let mut d_z = head_grads.input.clone();

        let mut record = IterationRecord {
            iteration,
            utility_loss: loss,
            si_fit: fitted.map(|f| f.statistic),
            si_batch: None,
            penalty: 0.0,
            degenerate: false,
            refined: false,
            refine_skipped: false,
            max_step_seconds: 0.0,
        };
        if let Some(fitted) = fitted {
            let tb = linalg::select_rows(self.data.t.as_ref(), &rows);
            let g = cca::si_gradient(z.as_ref(), tb.as_ref(), fitted)?;
            record.si_batch = Some(g.value);
            record.degenerate = g.degenerate;
            // the penalty is β·max(ŜI, 0); a negative batch value has no slope
            if !g.degenerate && g.value > 0.0 {
                record.penalty = self.cfg.beta * g.value;
                d_z += faer::Scale(self.cfg.beta) * &g.grad;
            }
        }
        let enc_grads = self.encoder.backward(d_z.as_ref())?;
        self.head_opt.step(&mut self.head, &head_grads)?;
        self.enc_opt.step(&mut self.encoder, &enc_grads)?;
        self.encoder.clear_cache();
        self.head.clear_cache();
        Ok(record)
    }

    pub fn iterate(&mut self, iteration: usize) -> Result<IterationRecord> {
        let max = if self.penalty_active() {
            Some(self.max_step(iteration)?)
        } else {
            None
        };
        let mut record = self.min_step(iteration, max.as_ref().map(|m| &m.fitted))?;
        if let Some(m) = max {
            record.refined = m.refined;
            record.refine_skipped = m.refine_skipped;
            record.max_step_seconds = m.seconds;
        }
        Ok(record)
    }
}

/// Runs `cfg.iterations` rounds of max-step then min-step.
///
/// With `β = 0` the max-step is skipped and the run is plain utility
/// training. Failures return the history completed so far.
pub fn train_infomin(
    data: &Dataset,
    encoder: Mlp,
    head: Mlp,
    cfg: &InfominConfig,
) -> std::result::Result<Trained, TrainAbort> {
    let mut trainer = match Trainer::new(data, encoder, head, cfg) {
        Ok(t) => t,
        Err(error) => {
            return Err(TrainAbort {
                error,
                history: TrainHistory::default(),
            })
        }
    };
    let mut history = TrainHistory::default();
    for it in 0..cfg.iterations {
        match trainer.iterate(it) {
            Ok(r) => history.records.push(r),
            Err(error) => return Err(TrainAbort { error, history }),
        }
    }
    Ok(Trained {
        encoder: trainer.encoder,
        head: trainer.head,
        history,
    })
}

/// Task utility of encoder+head on `data`: mean Pearson correlation between
/// prediction and target columns for regression, accuracy for
/// classification.
pub fn evaluate_utility(encoder: &Mlp, head: &Mlp, data: &Dataset, utility: Utility) -> Result<f64> {
    let pred = head.forward(encoder.forward(data.x.as_ref())?.as_ref())?;
    match utility {
        Utility::RegressionMse => {
            let k = data.y.ncols();
            let total: f64 = (0..k)
                .map(|j| linalg::pearson(pred.col_as_slice(j), data.y.col_as_slice(j)).unwrap_or(0.0))
                .sum();
            Ok(total / k as f64)
        }
        Utility::ClassificationCe => {
            let argmax = |m: &Matrix, i: usize| {
                (0..m.ncols())
                    .max_by(|&a, &b| m[(i, a)].total_cmp(&m[(i, b)]))
                    .unwrap_or(0)
            };
            let n = data.rows();
            let hits = (0..n).filter(|&i| argmax(&pred, i) == argmax(&data.y, i)).count();
            Ok(hits as f64 / n.max(1) as f64)
        }
    }
}

/// Held-out evaluation of a trained encoder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub beta: f64,
    pub utility: f64,
    pub renyi_zt: f64,
    pub median_max_step_seconds: Option<f64>,
}

pub fn evaluate(trained: &Trained, beta: f64, held_out: &Dataset, cfg: &InfominConfig, renyi: &RenyiConfig) -> Result<Evaluation> {
    let z = trained.encoder.forward(held_out.x.as_ref())?;
    let renyi_zt = if held_out.t.ncols() == 0 {
        0.0
    } else {
        baselines::neural_renyi(z.as_ref(), held_out.t.as_ref(), renyi, rng::derive(cfg.seed, "train/evaluate", &[]))?.value
    };
    Ok(Evaluation {
        beta,
        utility: evaluate_utility(&trained.encoder, &trained.head, held_out, cfg.utility)?,
        renyi_zt,
        median_max_step_seconds: trained.history.median_max_step_seconds(),
    })
}

/// Outcome of a β grid search.
#[derive(Debug, Clone)]
pub struct BetaSelection {
    pub evaluations: Vec<Evaluation>,
    pub baseline_utility: f64,
    pub selected: f64,
}

/// Largest β whose utility is at least `tolerance` times the β = 0 utility.
/// Returns `(baseline utility, selected β)`.
pub fn select_beta(evaluations: &[Evaluation], tolerance: f64) -> Result<(f64, f64)> {
    let base = evaluations
        .iter()
        .find(|e| e.beta == 0.0)
        .ok_or_else(|| Error::invalid_argument("beta selection needs a beta = 0 run"))?
        .utility;
    let selected = evaluations
        .iter()
        .filter(|e| e.utility >= tolerance * base)
        .map(|e| e.beta)
        .fold(0.0, f64::max);
    Ok((base, selected))
}

/// Trains one model per β (β = 0 always included) and selects the largest
/// β whose held-out utility is at least `tolerance · utility(β=0)`.
pub fn tune_beta(
    train: &Dataset,
    held_out: &Dataset,
    cfg: &InfominConfig,
    grid: &[f64],
    tolerance: f64,
    renyi: &RenyiConfig,
) -> Result<BetaSelection> {
    let mut betas: Vec<f64> = grid.to_vec();
    if !betas.contains(&0.0) {
        betas.push(0.0);
    }
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let mut evaluations = Vec::with_capacity(betas.len());
    for &beta in &betas {
        let run_cfg = InfominConfig { beta, ..cfg.clone() };
        let (encoder, head) = build_models(train.x.ncols(), train.y.ncols(), &run_cfg)?;
        let trained = train_infomin(train, encoder, head, &run_cfg)?;
        evaluations.push(evaluate(&trained, beta, held_out, &run_cfg, renyi)?);
    }
    let (baseline_utility, selected) = select_beta(&evaluations, tolerance)?;
    Ok(BetaSelection {
        evaluations,
        baseline_utility,
        selected,
    })
}
