//! Datasets: the synthetic association generator, the fairness toy task
//! and CSV ingestion with an explicit column-role schema.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use faer::MatRef;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, Rng};
use crate::slicing::VARIANCE_FLOOR;

/// Dimension of both `X` and `Y` in the association benchmark.
pub const SYNTHETIC_DIM: usize = 10;
/// Off-diagonal entry of the mixing matrix `A`.
pub const MIXING_OFF_DIAGONAL: f64 = 0.2;
/// `X_d ~ U[-X_RANGE, X_RANGE]`.
pub const X_RANGE: f64 = 3.0;

/// Association pattern `t(·)` applied elementwise to `AX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Linear,
    Square,
    Sin,
    Tanh,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::Linear, Pattern::Square, Pattern::Sin, Pattern::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Linear => "linear",
            Pattern::Square => "square",
            Pattern::Sin => "sin",
            Pattern::Tanh => "tanh",
        }
    }

    pub fn apply(self, a: f64) -> f64 {
        match self {
            Pattern::Linear => a,
            Pattern::Square => a * a,
            Pattern::Sin => a.sin(),
            Pattern::Tanh => a.tanh(),
        }
    }

    /// Exact range of `t(a)` for `a ∈ [-m, m]`.
    pub fn range_on(self, m: f64) -> (f64, f64) {
        match self {
            Pattern::Linear => (-m, m),
            Pattern::Square => (0.0, m * m),
            Pattern::Sin if m >= std::f64::consts::FRAC_PI_2 => (-1.0, 1.0),
            Pattern::Sin => (-m.sin(), m.sin()),
            Pattern::Tanh => (-m.tanh(), m.tanh()),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Pattern::Linear),
            "square" => Ok(Pattern::Square),
            "sin" => Ok(Pattern::Sin),
            "tanh" => Ok(Pattern::Tanh),
            other => Err(Error::invalid_argument(format!("unknown pattern '{other}'"))),
        }
    }
}

/// `Y = (1−α)·⟨t(AX)⟩ + α·ε` with `X_d ~ U[−3, 3]`, `ε ~ N(0, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pattern: Pattern,
    pub alpha: f64,
    pub dim: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(pattern: Pattern, alpha: f64, seed: u64) -> Result<Self> {
        let spec = SyntheticSpec {
            pattern,
            alpha,
            dim: SYNTHETIC_DIM,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid_argument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.dim == 0 {
            return Err(Error::invalid_argument("dimension must be positive"));
        }
        Ok(())
    }

    /// `A_dd = 1`, `A_dk = 0.2` for `k ≠ d`.
    pub fn mixing(&self) -> Matrix {
        mixing_matrix(self.dim)
    }

    /// Population minimum and maximum of `t((AX)_d)`, identical for every
    /// output dimension: the exact range of `t` over the support of `(AX)_d`.
    pub fn population_range(&self) -> (f64, f64) {
        let reach = X_RANGE * (1.0 + MIXING_OFF_DIAGONAL * (self.dim as f64 - 1.0));
        self.pattern.range_on(reach)
    }

    /// The noiseless signal `⟨t(AX)⟩`, each column rescaled to `[0, 1]`.
    pub fn signal(&self, x: MatRef<'_, f64>) -> Matrix {
        let ax = linalg::mul_nt(x, self.mixing().as_ref());
        let (lo, hi) = self.population_range();
        Matrix::from_fn(ax.nrows(), ax.ncols(), |i, j| (self.pattern.apply(ax[(i, j)]) - lo) / (hi - lo))
    }

    /// Draws `n` joint samples `(X, Y)` from `rng`.
    pub fn draw(&self, n: usize, rng: &mut Rng) -> (Matrix, Matrix) {
        let unif = Uniform::new_inclusive(-X_RANGE, X_RANGE).expect("finite range");
        let x = Matrix::from_fn(n, self.dim, |_, _| unif.sample(rng));
        let noise = Matrix::from_fn(n, self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = self.signal(x.as_ref());
        let a = self.alpha;
        let y = Matrix::from_fn(n, self.dim, |i, j| (1.0 - a) * s[(i, j)] + a * noise[(i, j)]);
        (x, y)
    }

    /// The "optimal test" statistic: correlation of the true generative
    /// signal `h(X) = Σ_d ⟨t(AX)⟩_d` with `g(Y) = Σ_d Y_d`.
    pub fn optimal_statistic(&self, x: MatRef<'_, f64>, y: MatRef<'_, f64>) -> f64 {
        let s = self.signal(x);
        let h: Vec<f64> = (0..s.nrows()).map(|i| (0..s.ncols()).map(|j| s[(i, j)]).sum()).collect();
        let g: Vec<f64> = (0..y.nrows()).map(|i| (0..y.ncols()).map(|j| y[(i, j)]).sum()).collect();
        linalg::pearson(&h, &g).unwrap_or(0.0)
    }
}

pub fn mixing_matrix(dim: usize) -> Matrix {
    Matrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { MIXING_OFF_DIAGONAL })
}

/// Generates an association dataset with `X` as features and `Y` as the
/// target; the protected block is empty.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut r = rng::stream(spec.seed, "synthetic", &[]);
    let (x, y) = spec.draw(n, &mut r);
    let t = Matrix::zeros(n, 0);
    Dataset::new(x, y, t)
}

/// Fair-representation toy task.
///
/// Latent utility factors `U ∈ R⁴` and a protected attribute `T ∈ R²` are
/// independent standard normals; the observed `X ∈ R¹⁰` mixes both linearly
/// (plus a little noise) and the target depends on `U` only:
/// `Y = u₁ + ½(u₂² − 1) + sin(u₃) + ½u₄ + 0.1ε`. An encoder can therefore
/// keep full utility while discarding everything about `T`.
pub fn fairness_toy(n: usize, seed: u64) -> Result<Dataset> {
    const U_DIM: usize = 4;
    const T_DIM: usize = 2;
    const X_DIM: usize = 10;
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    // the mixing is part of the task, not of the draw
    let mut task = rng::stream(0, "fairness-toy/mixing", &[]);
    let scale = 1.0 / ((U_DIM + T_DIM) as f64).sqrt();
    let mix = Matrix::from_fn(U_DIM + T_DIM, X_DIM, |_, _| scale * task.sample::<f64, _>(StandardNormal));

    let mut r = rng::stream(seed, "fairness-toy/draw", &[]);
    let latent = Matrix::from_fn(n, U_DIM + T_DIM, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut x = linalg::mul(latent.as_ref(), mix.as_ref());
    for j in 0..X_DIM {
        for v in x.col_as_slice_mut(j) {
            *v += 0.05 * r.sample::<f64, _>(StandardNormal);
        }
    }
    let y = Matrix::from_fn(n, 1, |i, _| {
        let u = |k: usize| latent[(i, k)];
        u(0) + 0.5 * (u(1) * u(1) - 1.0) + u(2).sin() + 0.5 * u(3)
    });
    let mut y = y;
    for v in y.col_as_slice_mut(0) {
        *v += 0.1 * r.sample::<f64, _>(StandardNormal);
    }
    let t = Matrix::from_fn(n, T_DIM, |i, j| latent[(i, U_DIM + j)]);
    let mut ds = Dataset::new(x, y, t)?;
    ds.x_columns = (0..X_DIM).map(|j| ColumnInfo::numeric(format!("x{j}"), Role::Feature)).collect();
    ds.y_columns = vec![ColumnInfo::numeric("y", Role::Target)];
    ds.t_columns = (0..T_DIM).map(|j| ColumnInfo::numeric(format!("t{j}"), Role::Protected)).collect();
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Feature,
    Target,
    Protected,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Where a dataset column came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnInfo {
    pub name: String,
    pub source: String,
    pub role: Role,
    /// Category value for one-hot columns.
    pub category: Option<String>,
    /// Set when standardization hit the variance floor.
    pub variance_floored: bool,
}

impl ColumnInfo {
    pub fn numeric(name: impl Into<String>, role: Role) -> Self {
        let name = name.into();
        ColumnInfo {
            source: name.clone(),
            name,
            role,
            category: None,
            variance_floored: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Row-aligned features `x`, prediction target `y` and protected target `t`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub t: Matrix,
    pub x_columns: Vec<ColumnInfo>,
    pub y_columns: Vec<ColumnInfo>,
    pub t_columns: Vec<ColumnInfo>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, t: Matrix) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n || t.nrows() != n {
            return Err(Error::invalid_argument(format!(
                "row counts differ: x {}, y {}, t {}",
                n,
                y.nrows(),
                t.nrows()
            )));
        }
        for (name, m) in [("x", &x), ("y", &y), ("t", &t)] {
            if !linalg::all_finite(m.as_ref()) {
                return Err(Error::invalid_data(format!("{name} contains non-finite values")));
            }
        }
        let cols = |prefix: &str, m: &Matrix, role| {
            (0..m.ncols())
                .map(|j| ColumnInfo::numeric(format!("{prefix}{j}"), role))
                .collect::<Vec<_>>()
        };
        Ok(Dataset {
            x_columns: cols("x", &x, Role::Feature),
            y_columns: cols("y", &y, Role::Target),
            t_columns: cols("t", &t, Role::Protected),
            x,
            y,
            t,
            split: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    /// Rows restricted to `idx`, keeping column metadata.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: linalg::select_rows(self.x.as_ref(), idx),
            y: linalg::select_rows(self.y.as_ref(), idx),
            t: linalg::select_rows(self.t.as_ref(), idx),
            x_columns: self.x_columns.clone(),
            y_columns: self.y_columns.clone(),
            t_columns: self.t_columns.clone(),
            split: None,
        }
    }

    /// Seeded random split into disjoint `train` and `test` row sets.
    pub fn with_split(mut self, train: usize, test: usize, seed: u64) -> Result<Self> {
        if train + test > self.rows() || train == 0 {
            return Err(Error::invalid_argument(format!(
                "split {train}+{test} does not fit {} rows",
                self.rows()
            )));
        }
        let mut order: Vec<usize> = (0..self.rows()).collect();
        order.shuffle(&mut rng::stream(seed, "dataset/split", &[]));
        self.split = Some(Split {
            train: order[..train].to_vec(),
            test: order[train..train + test].to_vec(),
        });
        Ok(self)
    }

    pub fn train(&self) -> Dataset {
        match &self.split {
            Some(s) => self.subset(&s.train),
            None => self.clone(),
        }
    }

    pub fn test(&self) -> Dataset {
        match &self.split {
            Some(s) => self.subset(&s.test),
            None => self.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default = "default_kind")]
    pub kind: ColumnKind,
}

fn default_kind() -> ColumnKind {
    ColumnKind::Numeric
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Column-role sidecar for CSV ingestion. Every CSV column must be listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

enum Parsed {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

/// Reads a comma-separated file with a header row into a [`Dataset`].
///
/// Categorical columns are one-hot encoded with categories in sorted order.
/// With `standardize`, numeric feature and protected columns are z-scored
/// (statistics from the training split when the schema defines one).
pub fn load_csv(path: &Path, schema: &Schema, standardize: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::invalid_data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::invalid_data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut seen = BTreeSet::new();
    for c in &schema.columns {
        if !seen.insert(c.name.as_str()) {
            return Err(Error::Schema(format!("column '{}' listed twice", c.name)));
        }
    }
    let mut specs = Vec::with_capacity(headers.len());
    for h in &headers {
        let spec = schema
            .columns
            .iter()
            .find(|c| &c.name == h)
            .ok_or_else(|| Error::Schema(format!("CSV column '{h}' has no schema entry")))?;
        specs.push(spec);
    }
    for c in &schema.columns {
        if !headers.contains(&c.name) {
            return Err(Error::Schema(format!("schema column '{}' missing from {}", c.name, path.display())));
        }
    }

    let mut parsed: Vec<Parsed> = specs
        .iter()
        .map(|s| match s.kind {
            ColumnKind::Numeric => Parsed::Numeric(Vec::new()),
            ColumnKind::Categorical => Parsed::Categorical(Vec::new()),
        })
        .collect();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::invalid_data(format!("{}: data row {}: {e}", path.display(), r + 1)))?;
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            match &mut parsed[c] {
                Parsed::Numeric(v) => {
                    let x: f64 = cell.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                        Error::invalid_data(format!(
                            "{}: data row {}, column {} ('{}'): cannot parse '{}' as a finite number",
                            path.display(),
                            r + 1,
                            c + 1,
                            headers[c],
                            cell
                        ))
                    })?;
                    v.push(x);
                }
                Parsed::Categorical(v) => v.push(cell.to_string()),
            }
        }
    }
    let n = parsed.first().map_or(0, |p| match p {
        Parsed::Numeric(v) => v.len(),
        Parsed::Categorical(v) => v.len(),
    });

    let mut blocks: [(Vec<Vec<f64>>, Vec<ColumnInfo>); 3] = Default::default();
    for (spec, values) in specs.iter().zip(parsed) {
        let slot = match spec.role {
            Role::Feature => 0,
            Role::Target => 1,
            Role::Protected => 2,
            Role::Drop => continue,
        };
        match values {
            Parsed::Numeric(v) => {
                blocks[slot].0.push(v);
                blocks[slot].1.push(ColumnInfo::numeric(spec.name.clone(), spec.role));
            }
            Parsed::Categorical(v) => {
                let categories: BTreeSet<&str> = v.iter().map(String::as_str).collect();
                for cat in categories {
                    blocks[slot].0.push(v.iter().map(|s| if s == cat { 1.0 } else { 0.0 }).collect());
                    blocks[slot].1.push(ColumnInfo {
                        name: format!("{}={}", spec.name, cat),
                        source: spec.name.clone(),
                        role: spec.role,
                        category: Some(cat.to_string()),
                        variance_floored: false,
                    });
                }
            }
        }
    }
    let to_matrix = |cols: &Vec<Vec<f64>>| Matrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let [(xc, xi), (yc, yi), (tc, ti)] = blocks;
    let mut ds = Dataset::new(to_matrix(&xc), to_matrix(&yc), to_matrix(&tc))?;
    ds.x_columns = xi;
    ds.y_columns = yi;
    ds.t_columns = ti;
    if let Some(split) = schema.split {
        ds = ds.with_split(split.train, split.test, split.seed)?;
    }
    if standardize {
        let fit_rows: Vec<usize> = match &ds.split {
            Some(s) => s.train.clone(),
            None => (0..n).collect(),
        };
        standardize_block(&mut ds.x, &mut ds.x_columns, &fit_rows);
        standardize_block(&mut ds.t, &mut ds.t_columns, &fit_rows);
    }
    Ok(ds)
}

fn standardize_block(m: &mut Matrix, info: &mut [ColumnInfo], fit_rows: &[usize]) {
    let k = fit_rows.len().max(1) as f64;
    for (j, col) in info.iter_mut().enumerate() {
        if col.category.is_some() {
            continue;
        }
        let values = m.col_as_slice_mut(j);
        let mean = fit_rows.iter().map(|&i| values[i]).sum::<f64>() / k;
        let var = fit_rows.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / k;
        col.variance_floored = var < VARIANCE_FLOOR;
        let sd = var.max(VARIANCE_FLOOR).sqrt();
        for v in values.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}
