//! Experiment and benchmark configuration files (JSON).

use anyhow::{Context, Result};
use bayescal_core::data::SplitFractions;
use bayescal_core::rng::derive_seed;
use bayescal_core::vi::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where the experiment's rows come from: a schema-described file on disk
/// or the built-in synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Path to a dataset schema JSON (see `bayescal_core::data::DatasetSchema`).
    Schema { path: PathBuf },
    /// Synthetic two-covariate dataset of the given size.
    Toy { n: usize },
}

/// Which post-hoc calibrators to fit on the calibration split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibratorKind {
    Logistic,
    Isotonic,
    Beta,
}

/// Partial training-section override; unset fields take the defaults
/// resolved by [`ExperimentConfig::bnn_config`] / [`ExperimentConfig::baseline_config`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub factor_count: Option<usize>,
    pub draws_validation: Option<usize>,
    pub draws_test: Option<usize>,
    pub clip_norm: Option<f64>,
}

fn default_hidden_layers() -> Vec<usize> {
    vec![4, 4]
}

fn default_calibrators() -> Vec<CalibratorKind> {
    vec![
        CalibratorKind::Beta,
        CalibratorKind::Isotonic,
        CalibratorKind::Logistic,
    ]
}

fn default_bins() -> usize {
    10
}

/// One dataset experiment: data source, split, architecture, training
/// budgets, calibrators, metric bins and output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset display name; defaults to the schema name or "Toy".
    #[serde(default)]
    pub name: Option<String>,
    pub source: DataSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub bnn: TrainSection,
    #[serde(default)]
    pub baseline: TrainSection,
    #[serde(default = "default_calibrators")]
    pub calibrators: Vec<CalibratorKind>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Variational training configuration with its derived seed stream.
    pub fn bnn_config(&self) -> TrainConfig {
        let defaults = TrainConfig::default();
        TrainConfig {
            max_epochs: self.bnn.max_epochs.unwrap_or(defaults.max_epochs),
            learning_rate: self.bnn.learning_rate.unwrap_or(defaults.learning_rate),
            factor_count: self.bnn.factor_count.unwrap_or(defaults.factor_count),
            draws_validation: self
                .bnn
                .draws_validation
                .unwrap_or(defaults.draws_validation),
            draws_test: self.bnn.draws_test.unwrap_or(defaults.draws_test),
            seed: derive_seed(self.seed, "bnn"),
            clip_norm: self.bnn.clip_norm.unwrap_or(defaults.clip_norm),
            ..defaults
        }
    }

    /// Conventional-network training configuration; its epoch budget
    /// defaults to half the variational one.
    pub fn baseline_config(&self) -> TrainConfig {
        let defaults = TrainConfig::default();
        let bnn_epochs = self.bnn.max_epochs.unwrap_or(defaults.max_epochs);
        TrainConfig {
            max_epochs: self.baseline.max_epochs.unwrap_or(bnn_epochs / 2),
            learning_rate: self.baseline.learning_rate.unwrap_or(1e-3),
            factor_count: 0,
            draws_validation: 0,
            draws_test: 0,
            seed: derive_seed(self.seed, "baseline"),
            clip_norm: self.baseline.clip_norm.unwrap_or(defaults.clip_norm),
            ..defaults
        }
    }
}

/// Benchmark over several experiments plus the comparison level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Paths to experiment config files, resolved relative to this file.
    pub experiments: Vec<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub out_dir: PathBuf,
}

pub fn default_alpha() -> f64 {
    0.05
}

impl BenchConfig {
    pub fn from_path(path: &Path) -> Result<(Self, Vec<ExperimentConfig>)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading bench config {}", path.display()))?;
        let config: BenchConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing bench config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut experiments = Vec::new();
        for exp_path in &config.experiments {
            let resolved = if exp_path.is_absolute() {
                exp_path.clone()
            } else {
                base.join(exp_path)
            };
            experiments.push(ExperimentConfig::from_path(&resolved)?);
        }
        Ok((config, experiments))
    }
}
