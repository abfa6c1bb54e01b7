use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng as _;
use rand_distr::StandardNormal;
use slice_infomin::data::fairness_toy;
use slice_infomin::nn::{self, Activation, Layer, Mlp};
use slice_infomin::train::{self, InfominConfig};
use slice_infomin::{rng, Matrix};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slice-infomin"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK_POWER: [&str; 14] = [
    "power",
    "--patterns",
    "linear",
    "--alphas",
    "0.2",
    "--methods",
    "slice,pearson",
    "--repeats",
    "50",
    "--permutations",
    "20",
    "--fit-size",
    "500",
    "--deterministic",
];

#[test]
fn power_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = QUICK_POWER.to_vec();
    args.extend(["--out-dir", s(dir.path())]);
    ok(&args);
    let rows = read_csv(&dir.path().join("results.csv"));
    assert_eq!(rows.len(), 2);
    for f in ["plot_linear.csv", "power_linear.svg", "manifest.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let plot = read_csv(&dir.path().join("plot_linear.csv"));
    assert_eq!(plot.len(), 1);
}

#[test]
fn power_is_reproducible_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let mut args = QUICK_POWER.to_vec();
        args.extend(["--seed", "7", "--out-dir", s(d.path())]);
        ok(&args);
    }
    for f in ["results.csv", "plot_linear.csv", "power_linear.svg"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn replaying_a_manifest_reproduces_power_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = QUICK_POWER.to_vec();
    args.extend(["--seed", "3", "--out-dir", s(a.path())]);
    ok(&args);
    ok(&["replay", s(&a.path().join("manifest.toml")), "--out-dir", s(b.path())]);
    assert_eq!(
        std::fs::read(a.path().join("results.csv")).unwrap(),
        std::fs::read(b.path().join("results.csv")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "seed = 11\n[power]\npatterns = [\"square\"]\nalphas = [0.4, 0.6]\nmethods = [\"dcorr\"]\n[protocol]\nrepeats = 30\npermutations = 20\nfit_size = 200\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["power", "--config", s(&cfg), "--alphas", "0.4", "--seed", "12", "--out-dir", s(&out)]);
    assert_eq!(column(&out.join("results.csv"), "alpha"), ["0.4"]);
    assert_eq!(column(&out.join("results.csv"), "method"), ["dcorr"]);
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 12"));
    assert!(manifest.contains("repeats = 30"));
    assert!(manifest.contains("command = \"power\""));
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = s(dir.path());
    assert_eq!(run(&["power", "--alphas", "2", "--out-dir", o]).status.code(), Some(2));
    assert_eq!(run(&["power", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["power", "--config", s(&bad), "--out-dir", o]).status.code(), Some(2));
    assert_eq!(
        run(&["power", "--config", s(&dir.path().join("absent.toml")), "--out-dir", o])
            .status
            .code(),
        Some(2)
    );

    let missing = dir.path().join("missing.ckpt");
    let out = run(&["eval", "--checkpoint", s(&missing), "--out-dir", o]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

const TRAIN_SMALL: [&str; 14] = [
    "train",
    "--synthetic",
    "fairness-toy",
    "--rows",
    "1500",
    "--train-rows",
    "1000",
    "--test-rows",
    "500",
    "--iterations",
    "15",
    "--n-prime",
    "300",
    "--deterministic",
];

#[test]
fn zero_beta_report_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TRAIN_SMALL.to_vec();
    args.extend(["--beta", "0", "--slices", "20", "--seed", "4", "--out-dir", s(dir.path())]);
    ok(&args);
    let report = dir.path().join("report.csv");
    let utility: f64 = column(&report, "utility")[0].parse().unwrap();
    assert_eq!(column(&report, "selected"), ["true"]);

    let data = fairness_toy(1500, 4).unwrap().with_split(1000, 500, 4).unwrap();
    let cfg = InfominConfig {
        iterations: 15,
        n_prime: 300,
        slices: 20,
        seed: 4,
        ..InfominConfig::default()
    };
    let (e, h) = train::build_models(10, 1, &cfg).unwrap();
    let trained = train::train_infomin(&data.train(), e, h, &cfg).unwrap();
    let plain = train::evaluate_utility(&trained.encoder, &trained.head, &data.test(), cfg.utility).unwrap();
    assert_eq!(utility, plain);

    let ckpt = nn::load_checkpoint(&dir.path().join("model_beta0.ckpt")).unwrap();
    assert_eq!(ckpt[0].1, trained.encoder);
    assert_eq!(read_csv(&dir.path().join("history_beta0.csv")).len(), 15);
}

#[test]
fn beta_grid_gives_one_report_row_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[train]\nslices = 10\nbatch_size = 128\n[renyi]\nmax_epochs = 20\n").unwrap();
    let mut args = TRAIN_SMALL.to_vec();
    args.extend(["--config", s(&cfg), "--beta-grid", "0,0.5,1,2", "--out-dir", s(dir.path())]);
    ok(&args);
    let report = dir.path().join("report.csv");
    assert_eq!(column(&report, "beta"), ["0.0", "0.5", "1.0", "2.0"]);
    assert_eq!(column(&report, "selected").iter().filter(|v| *v == "true").count(), 1);
    for b in ["0", "0.5", "1", "2"] {
        assert!(dir.path().join(format!("model_beta{b}.ckpt")).exists());
        assert!(dir.path().join(format!("history_beta{b}.csv")).exists());
    }
}

/// Writes `a,b,y,t` rows plus a schema with a 50/50 split. `t` copies `a`
/// when `identical`, otherwise it is independent noise.
fn write_dataset(dir: &Path, n: usize, identical: bool, seed: u64) -> (PathBuf, PathBuf) {
    let mut r = rng::stream(seed, "cli-test/data", &[]);
    let mut text = String::from("a,b,y,t\n");
    for _ in 0..n {
        let v: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
        let t = if identical { v[0] } else { v[3] };
        writeln!(text, "{},{},{},{}", v[0], v[1], v[2], t).unwrap();
    }
    let data = dir.join("data.csv");
    std::fs::write(&data, text).unwrap();
    let schema = dir.join("schema.toml");
    std::fs::write(
        &schema,
        format!(
            "[[columns]]\nname = \"a\"\nrole = \"feature\"\n[[columns]]\nname = \"b\"\nrole = \"feature\"\n\
             [[columns]]\nname = \"y\"\nrole = \"target\"\n[[columns]]\nname = \"t\"\nrole = \"protected\"\n\
             [split]\ntrain = {}\ntest = {}\n",
            n / 2,
            n - n / 2
        ),
    )
    .unwrap();
    (data, schema)
}

fn identity_checkpoint(dir: &Path) -> PathBuf {
    // Z = first feature column.
    let layer = Layer {
        weights: Matrix::from_fn(2, 1, |i, _| if i == 0 { 1.0 } else { 0.0 }),
        bias: vec![0.0],
        activation: Activation::Identity,
    };
    let enc = Mlp::from_layers(vec![layer], 0.0).unwrap();
    let path = dir.join("identity.ckpt");
    nn::save_checkpoint(&path, &[("encoder", &enc)]).unwrap();
    path
}

fn eval_metrics(dir: &Path, identical: bool, data_seed: u64, seed: &str) -> Vec<(String, f64, f64)> {
    let (data, schema) = write_dataset(dir, 2000, identical, data_seed);
    let ckpt = identity_checkpoint(dir);
    let out = dir.join(format!("eval-{seed}"));
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--checkpoint",
        s(&ckpt),
        "--seed",
        seed,
        "--out-dir",
        s(&out),
    ]);
    read_csv(&out.join("metrics.csv"))
        .iter()
        .map(|r| (r[0].to_string(), r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect()
}

#[test]
fn eval_on_identical_variables_scores_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let rows = eval_metrics(dir.path(), true, 1, "0");
    assert_eq!(rows.len(), 4);
    for (name, value, threshold) in rows {
        assert!(value >= 0.95, "{name} = {value}");
        assert!(value > threshold, "{name} not above its null threshold");
    }
}

/// One fixed realization. Each metric exceeds its 5% threshold on noise
/// with probability about 0.05, so a given seed can legitimately fail.
const DATA_SEED: u64 = 2;

#[test]
fn eval_on_independent_noise_stays_below_null_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    for (name, value, threshold) in eval_metrics(dir.path(), false, DATA_SEED, "0") {
        assert!(value <= threshold, "{name} = {value} exceeds null threshold {threshold}");
    }
}

#[test]
fn eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    eval_metrics(dir.path(), false, 1, "5");
    let first = std::fs::read(dir.path().join("eval-5/metrics.csv")).unwrap();
    std::fs::remove_dir_all(dir.path().join("eval-5")).unwrap();
    eval_metrics(dir.path(), false, 1, "5");
    assert_eq!(first, std::fs::read(dir.path().join("eval-5/metrics.csv")).unwrap());
}
