//! Command implementations. Each command reads only the resolved
//! [`RunConfig`], so a manifest replays it exactly.

use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::Serialize;
use slice_infomin::baselines;
use slice_infomin::harness::{self, AblationRow};
use slice_infomin::nn;
use slice_infomin::rng;
use slice_infomin::train::{self, Evaluation};
use slice_infomin::{Dataset, Matrix, PolyConfig};

use crate::config::{DataSource, RunConfig};
use crate::svg::{Chart, Series};
use crate::{manifest, AblateArgs, Cli, CliError, Command, DataArgs, EvalArgs, PowerArgs, ProtocolArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: Cli) -> Result<()> {
    let (mut cfg, name, default_out) = match &cli.command {
        Command::Replay(a) => {
            let (cfg, name) = manifest::read(&a.manifest)?;
            let base = a.manifest.parent().unwrap_or(Path::new("."));
            (cfg, name, base.join("replay"))
        }
        other => {
            let cfg = match &cli.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            (cfg, other.name().to_string(), PathBuf::from("out").join(other.name()))
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= cli.deterministic;
    match &cli.command {
        Command::Power(a) => apply_power(&mut cfg, a),
        Command::Ablate(a) => apply_ablate(&mut cfg, a),
        Command::Train(a) => apply_train(&mut cfg, a)?,
        Command::Eval(a) => apply_eval(&mut cfg, a)?,
        Command::Replay(_) => {}
    }
    cfg.resolve();
    let out = cli.out_dir.clone().unwrap_or(default_out);
    execute(&name, &cfg, &out)
}

/// Runs a named command with a resolved config and writes its manifest.
pub fn execute(name: &str, cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    let started = Utc::now();
    match name {
        "power" => power(cfg, out)?,
        "ablate" => ablate(cfg, out)?,
        "train" => train_cmd(cfg, out)?,
        "eval" => eval(cfg, out)?,
        other => return Err(CliError::usage(format!("unknown command '{other}'"))),
    }
    manifest::write(cfg, name, out, started)
}

fn apply_protocol(cfg: &mut RunConfig, a: &ProtocolArgs) {
    let p = &mut cfg.protocol;
    if let Some(v) = a.fit_size {
        p.fit_size = v;
    }
    if let Some(v) = a.test_size {
        p.test_size = v;
    }
    if let Some(v) = a.repeats {
        p.repeats = v;
    }
    if let Some(v) = a.permutations {
        p.permutations = v;
    }
    if let Some(v) = a.significance {
        p.significance = v;
    }
}

fn apply_power(cfg: &mut RunConfig, a: &PowerArgs) {
    apply_protocol(cfg, &a.protocol);
    if let Some(v) = &a.patterns {
        cfg.power.patterns = v.clone();
    }
    if let Some(v) = &a.alphas {
        cfg.power.alphas = v.clone();
    }
    if let Some(v) = &a.methods {
        cfg.power.methods = v.clone();
    }
    if let Some(v) = a.slices {
        cfg.protocol.slices = v;
    }
}

fn apply_ablate(cfg: &mut RunConfig, a: &AblateArgs) {
    apply_protocol(cfg, &a.protocol);
    if let Some(v) = &a.slices {
        cfg.ablate.slices = v.clone();
    }
    if let Some(v) = a.pattern {
        cfg.ablate.pattern = v;
    }
    if let Some(v) = a.alpha {
        cfg.ablate.alpha = v;
    }
    if let Some(v) = a.replicates {
        cfg.ablate.replicates = v;
    }
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) -> Result<()> {
    let d = &mut cfg.data;
    if a.synthetic.is_some() {
        d.source = DataSource::FairnessToy;
    }
    if let Some(p) = &a.data {
        d.source = DataSource::Csv;
        d.path = Some(p.clone());
    }
    if let Some(p) = &a.schema {
        if a.data.is_none() && d.source != DataSource::Csv {
            return Err(CliError::usage("--schema needs --data"));
        }
        d.schema = Some(p.clone());
    }
    if let Some(v) = a.rows {
        d.rows = v;
    }
    if let Some(v) = a.train_rows {
        d.train = v;
    }
    if let Some(v) = a.test_rows {
        d.test = v;
    }
    Ok(())
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    apply_data(cfg, &a.data)?;
    let t = &mut cfg.train;
    if let Some(v) = a.beta {
        t.beta = v;
        cfg.tuning.beta_grid.clear();
    }
    if let Some(v) = &a.beta_grid {
        cfg.tuning.beta_grid = v.clone();
    }
    if let Some(v) = a.tolerance {
        cfg.tuning.tolerance = v;
    }
    if let Some(v) = a.iterations {
        t.iterations = v;
    }
    if let Some(v) = a.slices {
        t.slices = v;
    }
    if let Some(v) = a.n_prime {
        t.n_prime = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    Ok(())
}

fn apply_eval(cfg: &mut RunConfig, a: &EvalArgs) -> Result<()> {
    apply_data(cfg, &a.data)?;
    if let Some(p) = &a.checkpoint {
        cfg.eval.checkpoint = Some(p.clone());
    }
    if let Some(v) = a.permutations {
        cfg.eval.permutations = v;
    }
    if let Some(v) = a.slices {
        cfg.eval.slices = v;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Fingerprint of everything a power cell depends on, so a checkpoint from
/// a different protocol is never reused.
fn protocol_fingerprint(cfg: &RunConfig) -> u64 {
    let text = toml::to_string(&cfg.protocol).expect("protocol serializes");
    rng::derive(0, &text, &[])
}

fn power(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.power;
    let checkpoint = out.join(format!("checkpoint-{:016x}.csv", protocol_fingerprint(cfg)));
    let results = harness::run_power_experiment(&p.patterns, &p.alphas, &p.methods, &cfg.protocol, Some(&checkpoint))?;
    harness::write_results_csv(&out.join("results.csv"), &results)?;
    for &pattern in &p.patterns {
        harness::write_plot_csv(&out.join(format!("plot_{}.csv", pattern.name())), &results, pattern)?;
        let (methods, table) = harness::plot_table(&results, pattern);
        let series = methods
            .iter()
            .enumerate()
            .map(|(j, m)| Series {
                label: m.name().to_string(),
                points: table.iter().map(|(a, cells)| (*a, cells[j])).collect(),
            })
            .collect();
        let chart = Chart {
            title: format!("Test power: {} pattern", pattern.name()),
            x_label: "alpha".into(),
            y_label: "power".into(),
            y_range: Some((0.0, 1.0)),
            series,
        };
        write_text(&out.join(format!("power_{}.svg", pattern.name())), &chart.render())?;
    }
    for r in &results {
        println!(
            "{:<7} alpha={:<6} {:<13} power={:.3} ± {:.3}",
            r.pattern.name(),
            r.alpha,
            r.method.name(),
            r.power,
            r.stderr
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRecord {
    replicate: usize,
    seed: u64,
    #[serde(rename = "S")]
    slices: usize,
    power: f64,
    stderr: f64,
    fit_seconds: f64,
}

#[derive(Debug, Serialize)]
struct AblationSummary {
    #[serde(rename = "S")]
    slices: usize,
    mean_power: f64,
    /// Standard error of the mean across replicates.
    stderr: f64,
    median_fit_seconds: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let a = &cfg.ablate;
    if a.replicates == 0 {
        return Err(CliError::usage("ablate.replicates must be at least 1"));
    }
    let mut records = Vec::new();
    for r in 0..a.replicates {
        let seed = rng::derive(cfg.seed, "cli/ablate", &[r as u64]);
        let protocol = slice_infomin::TestProtocol {
            seed,
            ..cfg.protocol.clone()
        };
        let rows: Vec<AblationRow> = harness::ablate_slices(&a.slices, a.pattern, a.alpha, &protocol)?;
        records.extend(rows.into_iter().map(|row| AblationRecord {
            replicate: r,
            seed,
            slices: row.slices,
            power: row.power,
            stderr: row.stderr,
            fit_seconds: row.fit_seconds,
        }));
    }
    harness::write_rows_csv(&out.join("ablation.csv"), &records)?;

    let summary: Vec<AblationSummary> = a
        .slices
        .iter()
        .map(|&s| {
            let powers: Vec<f64> = records.iter().filter(|r| r.slices == s).map(|r| r.power).collect();
            let n = powers.len() as f64;
            let mean = powers.iter().sum::<f64>() / n;
            let var = if n > 1.0 {
                powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            AblationSummary {
                slices: s,
                mean_power: mean,
                stderr: (var / n).sqrt(),
                median_fit_seconds: median(records.iter().filter(|r| r.slices == s).map(|r| r.fit_seconds).collect()),
            }
        })
        .collect();
    harness::write_rows_csv(&out.join("ablation_summary.csv"), &summary)?;
    let chart = Chart {
        title: format!("Slice ablation: {} pattern, alpha = {}", a.pattern.name(), a.alpha),
        x_label: "slices S".into(),
        y_label: "mean power".into(),
        y_range: Some((0.0, 1.0)),
        series: vec![Series {
            label: "slice".into(),
            points: summary.iter().map(|s| (s.slices as f64, Some(s.mean_power))).collect(),
        }],
    };
    write_text(&out.join("ablation.svg"), &chart.render())?;
    for s in &summary {
        println!("S={:<5} power={:.3} ± {:.3}", s.slices, s.mean_power, s.stderr);
    }
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<Dataset> {
    let data = cfg.data.load(cfg.seed)?;
    if data.split.is_none() {
        return Err(CliError::usage("the dataset needs a train/test split (set [split] in the schema)"));
    }
    Ok(data)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    beta: f64,
    utility: f64,
    renyi_zt: f64,
    max_step_seconds: Option<f64>,
    selected: bool,
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_split(cfg)?;
    let (train_set, held_out) = (data.train(), data.test());
    let grid = !cfg.tuning.beta_grid.is_empty();
    let mut betas = if grid {
        let mut b = cfg.tuning.beta_grid.clone();
        if !b.contains(&0.0) {
            b.push(0.0);
        }
        b
    } else {
        vec![cfg.train.beta]
    };
    betas.sort_by(f64::total_cmp);
    betas.dedup();

    let mut evaluations: Vec<Evaluation> = Vec::with_capacity(betas.len());
    for &beta in &betas {
        let run_cfg = train::InfominConfig {
            beta,
            ..cfg.train.clone()
        };
        run_cfg.validate(train_set.rows())?;
        let (encoder, head) = train::build_models(train_set.x.ncols(), train_set.y.ncols(), &run_cfg)?;
        let history_path = out.join(format!("history_beta{beta}.csv"));
        let trained = match train::train_infomin(&train_set, encoder, head, &run_cfg) {
            Ok(t) => t,
            Err(abort) => {
                abort.history.write_csv(&history_path, !cfg.deterministic)?;
                return Err(abort.into());
            }
        };
        trained.history.write_csv(&history_path, !cfg.deterministic)?;
        nn::save_checkpoint(
            &out.join(format!("model_beta{beta}.ckpt")),
            &[("encoder", &trained.encoder), ("head", &trained.head)],
        )?;
        let e = train::evaluate(&trained, beta, &held_out, &run_cfg, &cfg.renyi)?;
        println!("beta={beta:<8} utility={:.4} renyi_zt={:.4}", e.utility, e.renyi_zt);
        evaluations.push(e);
    }
    let selected = if grid {
        train::select_beta(&evaluations, cfg.tuning.tolerance)?.1
    } else {
        cfg.train.beta
    };
    let rows: Vec<ReportRow> = evaluations
        .iter()
        .map(|e| ReportRow {
            beta: e.beta,
            utility: e.utility,
            renyi_zt: e.renyi_zt,
            max_step_seconds: if cfg.deterministic {
                e.median_max_step_seconds.map(|_| 0.0)
            } else {
                e.median_max_step_seconds
            },
            selected: e.beta == selected,
        })
        .collect();
    harness::write_rows_csv(&out.join("report.csv"), &rows)?;
    if grid {
        println!("selected beta = {selected}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricRow {
    metric: &'static str,
    value: f64,
    null_threshold: f64,
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ckpt = cfg
        .eval
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::usage("eval needs --checkpoint"))?;
    if !ckpt.exists() {
        return Err(CliError::runtime(format!("checkpoint {} does not exist", ckpt.display())));
    }
    let nets = nn::load_checkpoint(ckpt)?;
    let encoder = nets
        .into_iter()
        .find(|(name, _)| name == "encoder")
        .map(|(_, net)| net)
        .ok_or_else(|| CliError::runtime(format!("{} holds no encoder", ckpt.display())))?;
    let data = cfg.data.load(cfg.seed)?;
    let held_out = if data.split.is_some() { data.test() } else { data };
    if held_out.t.ncols() == 0 {
        return Err(CliError::usage("eval needs protected columns"));
    }
    let z = encoder.forward(held_out.x.as_ref())?;
    let t = held_out.t;
    let e = &cfg.eval;
    if e.permutations < harness::MIN_PERMUTATIONS {
        return Err(CliError::usage(format!(
            "eval.permutations must be at least {}",
            harness::MIN_PERMUTATIONS
        )));
    }
    let poly = PolyConfig::new(cfg.train.poly_order)?;
    let renyi_seed = rng::derive(cfg.seed, "cli/eval/renyi", &[]);
    let slice_seed = rng::derive(cfg.seed, "cli/eval/slices", &[]);
    let metrics = |t: &Matrix| -> Result<[f64; 4]> {
        Ok([
            baselines::neural_renyi(z.as_ref(), t.as_ref(), &cfg.renyi, renyi_seed)?.value,
            baselines::pearson_proxy(z.as_ref(), t.as_ref())?.value,
            baselines::distance_correlation(z.as_ref(), t.as_ref())?.value,
            baselines::slice_score(z.as_ref(), t.as_ref(), e.slices, poly, cfg.protocol.ridge, slice_seed)?.value,
        ])
    };
    let observed = metrics(&t)?;
    let mut null: [Vec<f64>; 4] = Default::default();
    for p in 0..e.permutations {
        let shuffled = harness::shuffled_rows(&t, &mut rng::stream(cfg.seed, "cli/eval/permutation", &[p as u64]));
        for (k, v) in metrics(&shuffled)?.into_iter().enumerate() {
            null[k].push(v);
        }
    }
    let names = ["neural_renyi", "pearson", "dcorr", "slice"];
    let mut rows = Vec::with_capacity(4);
    for k in 0..4 {
        rows.push(MetricRow {
            metric: names[k],
            value: observed[k],
            null_threshold: harness::quantile_threshold(&null[k], e.significance)?,
        });
    }
    harness::write_rows_csv(&out.join("metrics.csv"), &rows)?;
    for r in &rows {
        println!("{:<13} {:.4} (null threshold {:.4})", r.metric, r.value, r.null_threshold);
    }
    Ok(())
}
