//! A small dense network stack with explicit forward and backward passes.
//!
//! Used for the infomin encoder and prediction head, and for the two
//! evaluator networks of the neural Rényi correlation.

use std::io::{Read, Write};
use std::path::Path;

use faer::MatRef;
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Identity),
            other => Err(Error::invalid_data(format!("unknown activation code {other}"))),
        }
    }
}

/// Affine map followed by an activation; `weights` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    pre: Matrix,
    out: Matrix,
    mask: Option<Matrix>,
}

/// Feedforward network. Dropout, when non-zero, is applied to the output of
/// every hidden layer in training mode only.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub dropout: f64,
    cache: Option<Vec<LayerCache>>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.dropout.to_bits() == other.dropout.to_bits()
    }
}

impl Mlp {
    /// Randomly initialized network with layer widths `sizes` (input first).
    ///
    /// Weights use Glorot-uniform scaling for `tanh`/identity layers and He
    /// scaling for `relu`; biases start at zero.
    pub fn new(sizes: &[usize], activations: &[Activation], dropout: f64, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::invalid_argument(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid_argument("layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid_argument(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut rng = rng::stream(seed, "mlp/init", &[]);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    weights: Matrix::from_fn(fan_in, fan_out, |_, _| dist.sample(&mut rng)),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            dropout,
            cache: None,
        })
    }

    /// `input → hidden… → output` with one activation for all hidden layers.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_activation; hidden.len()];
        acts.push(output_activation);
        Mlp::new(&sizes, &acts, dropout, seed)
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid_argument("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::invalid_argument("consecutive layer shapes do not chain"));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::invalid_argument("bias length differs from layer width"));
            }
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid_argument(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(Mlp {
            layers,
            dropout,
            cache: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Layer::output_dim));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.nrows() * l.weights.ncols() + l.bias.len()).sum()
    }

    fn check_input(&self, x: MatRef<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid_argument(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: MatRef<'_, f64>) -> Matrix {
        let mut pre = linalg::mul(x, layer.weights.as_ref());
        for (j, &b) in layer.bias.iter().enumerate() {
            for v in pre.col_as_slice_mut(j) {
                *v += b;
            }
        }
        pre
    }

    fn activate(layer: &Layer, pre: &Matrix) -> Matrix {
        Matrix::from_fn(pre.nrows(), pre.ncols(), |i, j| layer.activation.apply(pre[(i, j)]))
    }

    /// Inference pass: no dropout, nothing cached.
    pub fn forward(&self, x: MatRef<'_, f64>) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            let pre = Self::affine(layer, h.as_ref());
            h = Self::activate(layer, &pre);
        }
        Ok(h)
    }

    /// Training pass that caches activations for [`Mlp::backward`].
    ///
    /// Dropout is sampled from `dropout_rng` when given and the rate is
    /// positive; without an RNG the pass is deterministic.
    pub fn forward_train(&mut self, x: MatRef<'_, f64>, mut dropout_rng: Option<&mut Rng>) -> Result<Matrix> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let pre = Self::affine(layer, h.as_ref());
            let out = Self::activate(layer, &pre);
            let mask = match dropout_rng.as_deref_mut() {
                Some(r) if idx < last && self.dropout > 0.0 => Some(Matrix::from_fn(
                    out.nrows(),
                    out.ncols(),
                    |_, _| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 },
                )),
                _ => None,
            };
            let next = match &mask {
                Some(m) => Matrix::from_fn(out.nrows(), out.ncols(), |i, j| out[(i, j)] * m[(i, j)]),
                None => out.clone(),
            };
            caches.push(LayerCache {
                input: h,
                pre,
                out,
                mask,
            });
            h = next;
        }
        self.cache = Some(caches);
        Ok(h)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Reverse-mode pass for the most recent [`Mlp::forward_train`].
    pub fn backward(&self, upstream: MatRef<'_, f64>) -> Result<Gradients> {
        let caches = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidState("backward called without a cached forward pass".into()))?;
        let n = caches[0].input.nrows();
        if upstream.nrows() != n || upstream.ncols() != self.output_dim() {
            return Err(Error::invalid_argument(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                n,
                self.output_dim()
            )));
        }
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let d_pre = Matrix::from_fn(delta.nrows(), delta.ncols(), |i, j| {
                let masked = match &cache.mask {
                    Some(m) => delta[(i, j)] * m[(i, j)],
                    None => delta[(i, j)],
                };
                masked * layer.activation.derivative(cache.pre[(i, j)], cache.out[(i, j)])
            });
            let weights = linalg::mul_tn(cache.input.as_ref(), d_pre.as_ref());
            let bias = (0..d_pre.ncols()).map(|j| d_pre.col(j).iter().sum()).collect();
            delta = linalg::mul_nt(d_pre.as_ref(), layer.weights.as_ref());
            layer_grads.push(LayerGrad { weights, bias });
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            input: delta,
        })
    }

    /// Visits every parameter in a fixed order: per layer, weights
    /// column-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for j in 0..l.weights.ncols() {
                out.extend_from_slice(l.weights.col_as_slice(j));
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid_argument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for j in 0..l.weights.ncols() {
                for w in l.weights.col_as_slice_mut(j) {
                    *w = it.next().expect("length checked");
                }
            }
            for b in &mut l.bias {
                *b = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| linalg::all_finite(l.weights.as_ref()) && l.bias.iter().all(|b| b.is_finite()))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        w.write_all(&self.dropout.to_bits().to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.input_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.output_dim() as u32).to_le_bytes())?;
            w.write_all(&[l.activation.code()])?;
            for j in 0..l.weights.ncols() {
                for x in l.weights.col_as_slice(j) {
                    w.write_all(&x.to_bits().to_le_bytes())?;
                }
            }
            for b in &l.bias {
                w.write_all(&b.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let n_layers = read_u32(r)? as usize;
        let dropout = f64::from_bits(read_u64(r)?);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let fan_in = read_u32(r)? as usize;
            let fan_out = read_u32(r)? as usize;
            let mut code = [0u8; 1];
            r.read_exact(&mut code).map_err(truncated)?;
            let activation = Activation::from_code(code[0])?;
            let mut weights = Matrix::zeros(fan_in, fan_out);
            for j in 0..fan_out {
                for x in weights.col_as_slice_mut(j) {
                    *x = f64::from_bits(read_u64(r)?);
                }
            }
            let bias = (0..fan_out)
                .map(|_| read_u64(r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                weights,
                bias,
                activation,
            });
        }
        Mlp::from_layers(layers, dropout)
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::invalid_data(format!("truncated checkpoint: {e}"))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients in layer order plus the gradient w.r.t. the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Matrix,
}

impl Gradients {
    /// Flattened in the same order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for j in 0..l.weights.ncols() {
                out.extend_from_slice(l.weights.col_as_slice(j));
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-descent optimizer owning its moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update to `net` in place.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads.layers.iter().zip(&net.layers).any(|(g, l)| {
                g.weights.nrows() != l.weights.nrows()
                    || g.weights.ncols() != l.weights.ncols()
                    || g.bias.len() != l.bias.len()
            })
        {
            return Err(Error::invalid_argument("gradient shapes do not match the network"));
        }
        let g = grads.flat();
        if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::TrainingDiverged(format!(
                "non-finite gradient at parameter {pos} (step {})",
                self.steps + 1
            )));
        }
        let mut p = net.params();
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (pi, gi) in p.iter_mut().zip(&g) {
                    *pi -= self.learning_rate * gi;
                }
            }
            OptimizerKind::Adam => {
                if self.first.len() != p.len() {
                    self.first = vec![0.0; p.len()];
                    self.second = vec![0.0; p.len()];
                }
                let t = self.steps as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for i in 0..p.len() {
                    self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g[i];
                    self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        net.set_params(&p)?;
        if !net.all_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite parameters after step {}",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Mean squared error over all entries and its gradient w.r.t. `pred`.
pub fn mse(pred: MatRef<'_, f64>, target: MatRef<'_, f64>) -> Result<(f64, Matrix)> {
    if pred.nrows() != target.nrows() || pred.ncols() != target.ncols() {
        return Err(Error::invalid_argument("prediction and target shapes differ"));
    }
    let count = (pred.nrows() * pred.ncols()) as f64;
    let mut loss = 0.0;
    let grad = Matrix::from_fn(pred.nrows(), pred.ncols(), |i, j| {
        let d = pred[(i, j)] - target[(i, j)];
        loss += d * d;
        2.0 * d / count
    });
    Ok((loss / count, grad))
}

/// Softmax cross-entropy against one-hot (or soft) targets, averaged over
/// rows, with its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: MatRef<'_, f64>, target: MatRef<'_, f64>) -> Result<(f64, Matrix)> {
    if logits.nrows() != target.nrows() || logits.ncols() != target.ncols() {
        return Err(Error::invalid_argument("logit and target shapes differ"));
    }
    let (n, c) = (logits.nrows(), logits.ncols());
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for i in 0..n {
        let max = (0..c).map(|j| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..c).map(|j| (logits[(i, j)] - max).exp()).sum();
        let log_denom = denom.ln();
        for j in 0..c {
            let log_p = logits[(i, j)] - max - log_denom;
            loss -= target[(i, j)] * log_p;
            grad[(i, j)] = (log_p.exp() - target[(i, j)]) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SIMLPCK\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes named networks to a versioned little-endian binary container.
/// Parameters are stored as raw `f64` bits, so loading is bit-exact.
pub fn save_checkpoint(path: &Path, nets: &[(&str, &Mlp)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, net) in nets {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        net.write_to(&mut buf).expect("writing to a Vec cannot fail");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Mlp)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::invalid_data(format!("{} is not a network checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::invalid_data(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::invalid_data("checkpoint name is not UTF-8"))?;
        nets.push((name, Mlp::read_from(&mut r)?));
    }
    if !r.is_empty() {
        return Err(Error::invalid_data("trailing bytes after checkpoint"));
    }
    Ok(nets)
}
