//! Permutation-calibrated independence tests and the power experiment on
//! the synthetic association benchmark.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use faer::MatRef;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, RenyiConfig, RenyiEvaluator};
use crate::cca::{self, Ridge, SiEstimate};
use crate::data::{Pattern, SyntheticSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, Rng};
use crate::slicing::{self, PolyConfig};

/// Smallest permutation count accepted by [`calibrate_null`].
pub const MIN_PERMUTATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Slice,
    Pearson,
    Dcorr,
    NeuralRenyi,
    Optimal,
}

impl TestMethod {
    pub const ALL: [TestMethod; 5] = [
        TestMethod::Slice,
        TestMethod::Pearson,
        TestMethod::Dcorr,
        TestMethod::NeuralRenyi,
        TestMethod::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Slice => "slice",
            TestMethod::Pearson => "pearson",
            TestMethod::Dcorr => "dcorr",
            TestMethod::NeuralRenyi => "neural_renyi",
            TestMethod::Optimal => "optimal",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid_argument(format!("unknown test method '{s}'")))
    }
}

fn pattern_code(p: Pattern) -> u64 {
    p as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestProtocol {
    pub fit_size: usize,
    pub test_size: usize,
    pub repeats: usize,
    pub significance: f64,
    pub permutations: usize,
    /// Slice count for the slice method.
    pub slices: usize,
    pub poly_order: usize,
    pub ridge: Ridge,
    pub renyi: RenyiConfig,
    pub seed: u64,
    /// Record wall-clock fit times; off gives reproducible result rows.
    pub timing: bool,
}

impl Default for TestProtocol {
    fn default() -> Self {
        TestProtocol {
            fit_size: 10_000,
            test_size: 100,
            repeats: 1_000,
            significance: 0.05,
            permutations: 200,
            slices: 200,
            poly_order: 3,
            ridge: Ridge::default(),
            renyi: RenyiConfig::default(),
            seed: 0,
            timing: true,
        }
    }
}

impl TestProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::invalid_argument(format!(
                "significance must lie in (0, 1), got {}",
                self.significance
            )));
        }
        if self.repeats == 0 {
            return Err(Error::invalid_argument("repeats must be at least 1"));
        }
        if self.test_size < 4 || self.fit_size < 4 {
            return Err(Error::invalid_argument("fit and test sizes must be at least 4"));
        }
        if self.slices == 0 {
            return Err(Error::invalid_argument("slices must be positive"));
        }
        PolyConfig::new(self.poly_order)?;
        Ok(())
    }
}

/// A test statistic with all learned parameters frozen.
#[derive(Debug, Clone)]
pub enum FittedStatistic {
    Slice(Box<SiEstimate>),
    Pearson,
    Dcorr,
    NeuralRenyi(Box<RenyiEvaluator>),
    /// Correlation of the true generative transforms of this spec.
    Optimal(SyntheticSpec),
}

impl FittedStatistic {
    pub fn method(&self) -> TestMethod {
        match self {
            FittedStatistic::Slice(_) => TestMethod::Slice,
            FittedStatistic::Pearson => TestMethod::Pearson,
            FittedStatistic::Dcorr => TestMethod::Dcorr,
            FittedStatistic::NeuralRenyi(_) => TestMethod::NeuralRenyi,
            FittedStatistic::Optimal(_) => TestMethod::Optimal,
        }
    }

    /// Larger values indicate dependence.
    pub fn statistic(&self, x: MatRef<'_, f64>, y: MatRef<'_, f64>) -> Result<f64> {
        match self {
            FittedStatistic::Slice(fit) => cca::evaluate_si(x, y, fit),
            FittedStatistic::Pearson => baselines::pearson_proxy(x, y).map(|s| s.value),
            FittedStatistic::Dcorr => baselines::distance_correlation(x, y).map(|s| s.value),
            FittedStatistic::NeuralRenyi(ev) => ev.correlation(x, y),
            FittedStatistic::Optimal(spec) => Ok(spec.optimal_statistic(x, y)),
        }
    }
}

/// Learns the parameters of `method` on `(x, y)`.
pub fn fit_statistic(
    method: TestMethod,
    x: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    spec: Option<&SyntheticSpec>,
    protocol: &TestProtocol,
    seed: u64,
) -> Result<FittedStatistic> {
    Ok(match method {
        TestMethod::Slice => {
            let slices = slicing::sample_slices(protocol.slices, x.ncols(), y.ncols(), rng::derive(seed, "harness/slices", &[]))?;
            let poly = PolyConfig::new(protocol.poly_order)?;
            FittedStatistic::Slice(Box::new(cca::estimate_si(x, y, slices, poly, protocol.ridge)?))
        }
        TestMethod::Pearson => FittedStatistic::Pearson,
        TestMethod::Dcorr => FittedStatistic::Dcorr,
        TestMethod::NeuralRenyi => {
            let fit = baselines::fit_neural_renyi(x, y, &protocol.renyi, rng::derive(seed, "harness/renyi", &[]))?;
            FittedStatistic::NeuralRenyi(Box::new(fit.evaluator))
        }
        TestMethod::Optimal => FittedStatistic::Optimal(
            *spec.ok_or_else(|| Error::invalid_argument("the optimal test needs the generating spec"))?,
        ),
    })
}

/// Draws `n` joint samples.
pub type Sampler<'a> = dyn Fn(usize, &mut Rng) -> (Matrix, Matrix) + 'a;

/// Rows of `y` in a uniformly random order.
pub fn shuffled_rows(y: &Matrix, rng: &mut Rng) -> Matrix {
    let mut order: Vec<usize> = (0..y.nrows()).collect();
    order.shuffle(rng);
    linalg::select_rows(y.as_ref(), &order)
}

/// Statistic values under the permutation null: each permutation draws a
/// fresh sample of `test_size` rows and shuffles `Y` against `X`.
pub fn null_statistics(
    fitted: &FittedStatistic,
    sampler: &Sampler<'_>,
    protocol: &TestProtocol,
    seed: u64,
) -> Result<Vec<f64>> {
    if protocol.permutations < MIN_PERMUTATIONS {
        return Err(Error::CalibrationUnstable {
            permutations: protocol.permutations,
            minimum: MIN_PERMUTATIONS,
        });
    }
    (0..protocol.permutations as u64)
        .map(|p| {
            let mut r = rng::stream(seed, "harness/null", &[p]);
            let (x, y) = sampler(protocol.test_size, &mut r);
            let y = shuffled_rows(&y, &mut r);
            fitted.statistic(x.as_ref(), y.as_ref())
        })
        .collect()
}

/// The `⌈(1−α)B⌉`-th smallest of `B` null values; a test rejects when its
/// statistic is strictly greater.
pub fn quantile_threshold(null: &[f64], significance: f64) -> Result<f64> {
    if null.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::invalid_argument(format!("significance must lie in (0, 1), got {significance}")));
    }
    let mut sorted = null.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((1.0 - significance) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[k.clamp(1, sorted.len()) - 1])
}

pub fn calibrate_null(
    fitted: &FittedStatistic,
    sampler: &Sampler<'_>,
    protocol: &TestProtocol,
    seed: u64,
) -> Result<f64> {
    quantile_threshold(&null_statistics(fitted, sampler, protocol, seed)?, protocol.significance)
}

/// Rejection rate and mean statistic over `protocol.repeats` fresh draws.
pub fn rejection_rate(
    fitted: &FittedStatistic,
    threshold: f64,
    sampler: &Sampler<'_>,
    protocol: &TestProtocol,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rejections = 0usize;
    let mut total = 0.0;
    for trial in 0..protocol.repeats as u64 {
        let mut r = rng::stream(seed, "harness/trial", &[trial]);
        let (x, y) = sampler(protocol.test_size, &mut r);
        let s = fitted.statistic(x.as_ref(), y.as_ref())?;
        total += s;
        if s > threshold {
            rejections += 1;
        }
    }
    let n = protocol.repeats as f64;
    Ok((rejections as f64 / n, total / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub pattern: Pattern,
    pub alpha: f64,
    pub method: TestMethod,
    /// Slice count; only meaningful for the slice method.
    #[serde(rename = "S")]
    pub slices: Option<usize>,
    pub power: f64,
    /// Binomial standard error of `power`.
    pub stderr: f64,
    pub mean_statistic: f64,
    pub threshold: f64,
    pub fit_seconds: f64,
}

impl PowerResult {
    fn key(&self) -> (Pattern, u64, TestMethod, Option<usize>) {
        (self.pattern, self.alpha.to_bits(), self.method, self.slices)
    }
}

pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Fit, calibrate and test one `(pattern, α, method)` cell.
///
/// Fit data, null draws and trial draws depend only on the seed, pattern
/// and α, so every method sees the same samples and adding a method never
/// changes another cell.
pub fn run_cell(pattern: Pattern, alpha: f64, method: TestMethod, protocol: &TestProtocol) -> Result<PowerResult> {
    protocol.validate()?;
    let spec = SyntheticSpec::new(pattern, alpha, protocol.seed)?;
    let cell = [pattern_code(pattern), alpha.to_bits()];
    let sampler = move |n: usize, r: &mut Rng| spec.draw(n, r);

    let (fx, fy) = spec.draw(protocol.fit_size, &mut rng::stream(protocol.seed, "harness/fit-data", &cell));
    let start = Instant::now();
    let fitted = fit_statistic(
        method,
        fx.as_ref(),
        fy.as_ref(),
        Some(&spec),
        protocol,
        rng::derive(protocol.seed, "harness/fit", &[cell[0], cell[1], method.code()]),
    )?;
    let fit_seconds = if protocol.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    drop((fx, fy));

    let data_seed = rng::derive(protocol.seed, "harness/cell", &cell);
    let threshold = calibrate_null(&fitted, &sampler, protocol, data_seed)?;
    let (power, mean_statistic) = rejection_rate(&fitted, threshold, &sampler, protocol, data_seed)?;
    Ok(PowerResult {
        pattern,
        alpha,
        method,
        slices: (method == TestMethod::Slice).then_some(protocol.slices),
        power,
        stderr: binomial_stderr(power, protocol.repeats),
        mean_statistic,
        threshold,
        fit_seconds,
    })
}

/// Power over the full `patterns × alphas × methods` grid.
///
/// With a checkpoint path, finished cells are appended to that CSV as they
/// complete and cells already present are loaded instead of recomputed.
pub fn run_power_experiment(
    patterns: &[Pattern],
    alphas: &[f64],
    methods: &[TestMethod],
    protocol: &TestProtocol,
    checkpoint: Option<&Path>,
) -> Result<Vec<PowerResult>> {
    protocol.validate()?;
    if patterns.is_empty() || alphas.is_empty() || methods.is_empty() {
        return Err(Error::invalid_argument("empty experiment grid"));
    }
    for &a in alphas {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::invalid_argument(format!("alpha must lie in (0, 1), got {a}")));
        }
    }
    let mut done = match checkpoint {
        Some(p) if p.exists() => read_results_csv(p)?,
        _ => Vec::new(),
    };
    let mut out = Vec::with_capacity(patterns.len() * alphas.len() * methods.len());
    for &pattern in patterns {
        for &alpha in alphas {
            for &method in methods {
                let key = (
                    pattern,
                    alpha.to_bits(),
                    method,
                    (method == TestMethod::Slice).then_some(protocol.slices),
                );
                if let Some(r) = done.iter().find(|r| r.key() == key) {
                    out.push(r.clone());
                    continue;
                }
                let r = run_cell(pattern, alpha, method, protocol)?;
                if let Some(p) = checkpoint {
                    done.push(r.clone());
                    write_results_csv(p, &done)?;
                }
                out.push(r);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    #[serde(rename = "S")]
    pub slices: usize,
    pub power: f64,
    pub stderr: f64,
    pub fit_seconds: f64,
}

/// Slice-method power for each slice count in `s_grid`.
pub fn ablate_slices(s_grid: &[usize], pattern: Pattern, alpha: f64, protocol: &TestProtocol) -> Result<Vec<AblationRow>> {
    if s_grid.is_empty() || s_grid.contains(&0) {
        return Err(Error::invalid_argument("slice grid must hold positive integers"));
    }
    s_grid
        .iter()
        .map(|&s| {
            let p = TestProtocol {
                slices: s,
                ..protocol.clone()
            };
            let r = run_cell(pattern, alpha, TestMethod::Slice, &p)?;
            Ok(AblationRow {
                slices: s,
                power: r.power,
                stderr: r.stderr,
                fit_seconds: r.fit_seconds,
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid_data(format!("{}: {other:?}", path.display())),
    }
}

/// Serializes any row type with a header line.
pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: pattern, alpha, method, S, power, stderr, mean_statistic,
/// threshold, fit_seconds.
pub fn write_results_csv(path: &Path, rows: &[PowerResult]) -> Result<()> {
    write_rows_csv(path, rows)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<PowerResult>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Power table for one pattern: rows by α, one column per method.
pub fn plot_table(results: &[PowerResult], pattern: Pattern) -> (Vec<TestMethod>, Vec<(f64, Vec<Option<f64>>)>) {
    let rows: Vec<&PowerResult> = results.iter().filter(|r| r.pattern == pattern).collect();
    let methods: Vec<TestMethod> = rows.iter().map(|r| r.method).collect::<BTreeSet<_>>().into_iter().collect();
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let table = alphas
        .into_iter()
        .map(|a| {
            let cells = methods
                .iter()
                .map(|&m| rows.iter().find(|r| r.alpha == a && r.method == m).map(|r| r.power))
                .collect();
            (a, cells)
        })
        .collect();
    (methods, table)
}

/// Writes [`plot_table`] as CSV: `alpha,<method>,<method>,…`.
pub fn write_plot_csv(path: &Path, results: &[PowerResult], pattern: Pattern) -> Result<()> {
    let (methods, table) = plot_table(results, pattern);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["alpha".to_string()];
    header.extend(methods.iter().map(|m| m.name().to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (alpha, cells) in table {
        let mut rec = vec![alpha.to_string()];
        rec.extend(cells.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
