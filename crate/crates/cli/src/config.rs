//! TOML configuration files, one shape per command. Relative paths are
//! resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use modelsel_core::eval::MetricsOptions;
use modelsel_core::{ClassMode, ExperimentConfig, NoisyOracleConfig, PolicySpec};
use modelsel_service::CollectionSource;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub pool_size: usize,
    pub max_budget: usize,
    pub realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub budgets_to_report: Option<Vec<usize>>,
    #[serde(default)]
    pub metrics: Option<MetricsOptions>,
}

impl ExperimentSection {
    pub fn build(&self, policies: Vec<PolicySpec>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(self.pool_size, self.max_budget, self.realizations, self.master_seed, policies);
        if let Some(b) = &self.budgets_to_report {
            cfg.budgets_to_report = b.clone();
        }
        if let Some(m) = &self.metrics {
            cfg.metrics = m.clone();
        }
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub predictions: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub class_mode: ClassMode,
    #[serde(default)]
    pub noisy_oracle: NoisyOracleConfig,
    /// Explicit ε grid; the two-stage default grid is used when absent.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub predictions: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub experiment: ExperimentSection,
    pub policies: Vec<PolicySpec>,
    /// Model-selector entries without an epsilon take the chosen ε of this
    /// tuning report.
    #[serde(default)]
    pub tuning_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRange {
    pub count: usize,
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub num_examples: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub correlation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub accuracy_targets: Option<Vec<f64>>,
    #[serde(default)]
    pub targets: Option<TargetRange>,
    #[serde(default)]
    pub drift: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Defaults to `<out>/sessions`.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    pub collections: Vec<CollectionSource>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// A metrics report written by `run`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// A session transcript to replay against `predictions`.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub predictions: Option<PathBuf>,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Resolves `path` against `base` and checks that it exists.
pub fn input(base: &Path, path: &Path, what: &str) -> Result<PathBuf, CliError> {
    let full = resolve(base, path);
    if !full.exists() {
        return Err(CliError::Config(format!("{what} file not found: {}", full.display())));
    }
    Ok(full)
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn base_dir(config: &Path) -> PathBuf {
    config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
