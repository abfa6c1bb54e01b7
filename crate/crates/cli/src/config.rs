//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slice_infomin::baselines::RenyiConfig;
use slice_infomin::data::{self, Schema};
use slice_infomin::{Dataset, InfominConfig, Pattern, TestMethod, TestProtocol};

use crate::CliError;

/// Everything a command needs. Every field has a default, so an empty file
/// is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; copied into the protocol and training seeds on resolve.
    pub seed: u64,
    /// Zero all wall-clock columns so outputs are byte-reproducible.
    pub deterministic: bool,
    pub protocol: TestProtocol,
    pub power: PowerSettings,
    pub ablate: AblateSettings,
    pub train: InfominConfig,
    pub tuning: TuningSettings,
    pub data: DataSettings,
    /// Evaluator used for the held-out `ρ*(Z, T)` in train reports.
    pub renyi: RenyiConfig,
    pub eval: EvalSettings,
    /// Provenance written by a previous run; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            deterministic: false,
            protocol: TestProtocol::default(),
            power: PowerSettings::default(),
            ablate: AblateSettings::default(),
            train: InfominConfig::default(),
            tuning: TuningSettings::default(),
            data: DataSettings::default(),
            renyi: RenyiConfig::default(),
            eval: EvalSettings::default(),
            run: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSettings {
    pub patterns: Vec<Pattern>,
    pub alphas: Vec<f64>,
    pub methods: Vec<TestMethod>,
}

impl Default for PowerSettings {
    fn default() -> Self {
        PowerSettings {
            patterns: Pattern::ALL.to_vec(),
            alphas: vec![0.2, 0.4, 0.6, 0.8, 0.999],
            methods: TestMethod::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSettings {
    pub slices: Vec<usize>,
    pub pattern: Pattern,
    pub alpha: f64,
    /// Independent replicates, each with its own derived seed.
    pub replicates: usize,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            slices: vec![10, 20, 50, 100, 200],
            pattern: Pattern::Sin,
            alpha: 0.4,
            replicates: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSettings {
    /// Empty: train once at `train.beta`.
    pub beta_grid: Vec<f64>,
    /// Selected β keeps utility at least this fraction of the β = 0 run.
    pub tolerance: f64,
}

impl Default for TuningSettings {
    fn default() -> Self {
        TuningSettings {
            beta_grid: Vec::new(),
            tolerance: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    FairnessToy,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    pub source: DataSource,
    /// Rows generated for the synthetic source.
    pub rows: usize,
    /// Train/test sizes for the synthetic source.
    pub train: usize,
    pub test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    pub standardize: bool,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            source: DataSource::FairnessToy,
            rows: 25_000,
            train: 20_000,
            test: 5_000,
            path: None,
            schema: None,
            standardize: true,
        }
    }
}

impl DataSettings {
    pub fn load(&self, seed: u64) -> Result<Dataset, CliError> {
        match self.source {
            DataSource::FairnessToy => {
                if self.train + self.test > self.rows {
                    return Err(CliError::usage(format!(
                        "data.train + data.test ({}) exceeds data.rows ({})",
                        self.train + self.test,
                        self.rows
                    )));
                }
                Ok(data::fairness_toy(self.rows, seed)?.with_split(self.train, self.test, seed)?)
            }
            DataSource::Csv => {
                let path = self.path.as_ref().ok_or_else(|| CliError::usage("csv data needs data.path"))?;
                let schema = self
                    .schema
                    .as_ref()
                    .ok_or_else(|| CliError::usage("csv data needs data.schema"))?;
                Ok(data::load_csv(path, &Schema::load(schema)?, self.standardize)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Row shuffles of T used for each metric's null threshold.
    pub permutations: usize,
    pub significance: f64,
    pub slices: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            checkpoint: None,
            permutations: 20,
            significance: 0.05,
            slices: 200,
        }
    }
}

/// Provenance of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub out_dir: PathBuf,
    pub started: String,
    pub finished: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Propagates the root seed and deterministic flag into the sections.
    pub fn resolve(&mut self) {
        self.protocol.seed = self.seed;
        self.train.seed = self.seed;
        if self.deterministic {
            self.protocol.timing = false;
        }
        self.run = None;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }
}
