//! The per-dataset benchmark pipeline: load, binarize, split, standardize,
//! train the conventional network and the variational one, fit the post-hoc
//! calibrators, and evaluate all methods on the untouched test split.

use crate::config::{CalibratorKind, DataSource, ExperimentConfig};
use anyhow::{bail, Context, Result};
use bayescal_core::calibration::{
    fit_beta, fit_isotonic, fit_logistic, Calibrator, ScoreSet, PROB_FLOOR,
};
use bayescal_core::data::{
    binarize_majority, generate_toy, load_csv, standardize, stratified_split, DatasetSchema,
    RawDataset, SplitSet,
};
use bayescal_core::metrics::{brier_score, ece, log_loss, reliability_curve, PredictionSet, ReliabilityCurve};
use bayescal_core::nn::{self, BinaryBatch, NetworkArch, NetworkParams};
use bayescal_core::rng::{derive_seed, Prng};
use bayescal_core::vi::{
    adam_step, clipped_log_loss, fit_bnn, predictive_probabilities, AdamState, EpochRecord,
    TrainConfig, TrainHistory,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Fixed method order matching the benchmark table columns.
pub const METHOD_ORDER: [&str; 5] = ["Uncalibrated", "Beta", "Isotonic", "Logistic", "VarBayes"];

/// Test-split evaluation of one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub log_loss: f64,
    pub brier: f64,
    pub ece: f64,
    /// Epoch selected on the validation split for the underlying network
    /// (the conventional network for calibrated methods).
    pub epoch_tau: usize,
    pub reliability: ReliabilityCurve,
}

/// Everything an experiment produces, serialized as `results.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub dataset: String,
    pub seed: u64,
    pub rows_total: usize,
    pub rows_dropped: usize,
    pub split_sizes: [usize; 4],
    pub methods: Vec<MethodResult>,
}

impl ExperimentOutput {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Trains the conventional network by full-batch ADAM ascent on the
/// log-likelihood, tracking validation log-loss per epoch, and returns the
/// parameters from the best epoch with the history.
pub fn fit_baseline(
    splits: &SplitSet,
    arch: &NetworkArch,
    config: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    let train = splits.train();
    let validation = splits.validation();
    if train.is_empty() || validation.is_empty() {
        bail!("training and validation splits must be non-empty");
    }
    let n = train.len() as f64;
    let root = Prng::new(config.seed);
    let mut init_rng = root.derive("baseline-init");
    let mut params = nn::init_params(arch, &mut init_rng);

    let validation_loss = |params: &NetworkParams| -> Result<f64> {
        let probs = plugin_probabilities(params, validation)?;
        Ok(clipped_log_loss(&probs, validation.labels()))
    };

    let mut history = TrainHistory::default();
    let initial_loss = validation_loss(&params)?;
    history.records.push(EpochRecord {
        epoch: 0,
        objective: nn::log_likelihood(&params, train)? / n,
        validation_log_loss: initial_loss,
    });
    let mut best = (params.clone(), initial_loss);
    let mut adam = AdamState::new(
        params.theta().len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );

    for epoch in 1..=config.max_epochs {
        let mut grad = nn::grad_log_likelihood(&params, train)?;
        let objective = nn::log_likelihood(&params, train)? / n;
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            bail!("baseline training diverged at epoch {epoch}");
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.clip_norm {
            let scale = config.clip_norm / norm;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            history.clip_events += 1;
        }
        let (theta, next_adam) = adam_step(&adam, params.theta(), &grad)?;
        adam = next_adam;
        params = NetworkParams::new(theta, arch.clone())?;

        let val = validation_loss(&params)?;
        history.records.push(EpochRecord {
            epoch,
            objective,
            validation_log_loss: val,
        });
        if val < best.1 {
            best = (params.clone(), val);
        }
    }
    Ok((best.0, history))
}

/// Deterministic class probabilities of the conventional network.
fn plugin_probabilities(params: &NetworkParams, batch: &BinaryBatch) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        probs.push(nn::logistic(nn::forward(params, batch.row(i))?));
    }
    Ok(probs)
}

fn load_dataset(config: &ExperimentConfig) -> Result<RawDataset> {
    match &config.source {
        DataSource::Toy { n } => Ok(generate_toy(*n, derive_seed(config.seed, "toy-data"))),
        DataSource::Schema { path } => {
            let schema = DatasetSchema::from_path(path)
                .with_context(|| format!("loading schema {}", path.display()))?;
            let data_path = {
                let p = Path::new(&schema.path);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    path.parent().unwrap_or_else(|| Path::new(".")).join(p)
                }
            };
            let data = load_csv(&data_path, &schema)
                .with_context(|| format!("loading dataset {}", data_path.display()))?;
            Ok(data)
        }
    }
}

fn fit_calibrator(kind: CalibratorKind, scores: &ScoreSet) -> Result<Calibrator> {
    Ok(match kind {
        CalibratorKind::Logistic => Calibrator::Logistic(fit_logistic(scores)?),
        CalibratorKind::Isotonic => Calibrator::Isotonic(fit_isotonic(scores)?),
        CalibratorKind::Beta => Calibrator::Beta(fit_beta(scores)?),
    })
}

fn clip_probs(probs: &mut [f64]) {
    for p in probs.iter_mut() {
        *p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    }
}

fn evaluate_method(
    method: &str,
    probs: Vec<f64>,
    labels: &[u8],
    epoch_tau: usize,
    bins: usize,
) -> Result<MethodResult> {
    let pset = PredictionSet::new(probs, labels.to_vec())?;
    Ok(MethodResult {
        method: method.to_string(),
        log_loss: log_loss(&pset)?,
        brier: brier_score(&pset),
        ece: ece(&pset, bins)?,
        epoch_tau,
        reliability: reliability_curve(&pset, bins)?,
    })
}

/// Runs the full pipeline for one dataset and returns the per-method test
/// results. All randomness derives from `config.seed`, so reruns with the
/// same configuration are bit-identical.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let raw = load_dataset(config)?;
    let dataset_name = config.name.clone().unwrap_or_else(|| raw.name.clone());
    let labels = binarize_majority(&raw.target);

    let splits = stratified_split(
        &raw.features,
        raw.n_features(),
        &labels,
        &config.fractions,
        derive_seed(config.seed, "split"),
    )?;
    let splits = standardize(splits);

    let mut layer_sizes = vec![raw.n_features()];
    layer_sizes.extend_from_slice(&config.hidden_layers);
    layer_sizes.push(1);
    let arch = NetworkArch::new(layer_sizes)?;

    // (a) Conventional network, calibrated post hoc on the calibration split.
    let base_cfg = config.baseline_config();
    let (theta_base, hist_base) = fit_baseline(&splits, &arch, &base_cfg)?;
    let tau_base = hist_base.best_epoch().unwrap_or(0);

    let cal_scores = plugin_probabilities(&theta_base, splits.calibration())?;
    let score_set = ScoreSet::new(cal_scores, splits.calibration().labels().to_vec())?;
    let mut calibrators = Vec::new();
    for kind in &config.calibrators {
        calibrators.push(fit_calibrator(*kind, &score_set)?);
    }

    // (b) Variational network with its own epoch selection.
    let bnn_cfg = config.bnn_config();
    let (lambda, hist_bnn) = fit_bnn(&splits, &arch, &bnn_cfg)?;
    let tau_bnn = hist_bnn.best_epoch().unwrap_or(0);

    // The test split is touched exactly once, after all fitting.
    let test = splits.test();
    let test_labels = test.labels();
    let base_test = plugin_probabilities(&theta_base, test)?;

    let mut methods = Vec::new();
    let mut uncal = base_test.clone();
    clip_probs(&mut uncal);
    methods.push(evaluate_method(
        "Uncalibrated",
        uncal,
        test_labels,
        tau_base,
        config.bins,
    )?);

    for calibrator in &calibrators {
        let mut probs = Vec::with_capacity(base_test.len());
        for &s in &base_test {
            probs.push(calibrator.apply(s)?);
        }
        methods.push(evaluate_method(
            calibrator.name(),
            probs,
            test_labels,
            tau_base,
            config.bins,
        )?);
    }

    let mut bnn_probs = predictive_probabilities(
        &lambda,
        &arch,
        test,
        bnn_cfg.draws_test,
        derive_seed(config.seed, "test-eval"),
    )?;
    clip_probs(&mut bnn_probs);
    methods.push(evaluate_method(
        "VarBayes",
        bnn_probs,
        test_labels,
        tau_bnn,
        config.bins,
    )?);

    // Canonical table order for the methods that were run.
    methods.sort_by_key(|m| {
        METHOD_ORDER
            .iter()
            .position(|&name| name == m.method)
            .unwrap_or(METHOD_ORDER.len())
    });

    let output = ExperimentOutput {
        dataset: dataset_name,
        seed: config.seed,
        rows_total: raw.n_rows(),
        rows_dropped: raw.n_dropped,
        split_sizes: [
            splits.train().len(),
            splits.validation().len(),
            splits.calibration().len(),
            splits.test().len(),
        ],
        methods,
    };

    write_experiment_files(&config.out_dir, &output, &calibrators)?;
    Ok(output)
}

/// File-system-safe dataset directory name.
pub fn slugify(name: &str) -> String {
    let mut slug = String::new();
    let mut last_dash = true;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
            last_dash = false;
        } else if !last_dash {
            slug.push('-');
            last_dash = true;
        }
    }
    while slug.ends_with('-') {
        slug.pop();
    }
    slug
}

fn write_experiment_files(
    out_dir: &Path,
    output: &ExperimentOutput,
    calibrators: &[Calibrator],
) -> Result<PathBuf> {
    let dir = out_dir.join(slugify(&output.dataset));
    std::fs::create_dir_all(&dir)?;

    let results = serde_json::to_string_pretty(output)?;
    std::fs::write(dir.join("results.json"), results)?;

    let cal_json = serde_json::to_string_pretty(calibrators)?;
    std::fs::write(dir.join("calibrators.json"), cal_json)?;

    // Single-row loss fragment; `bench` assembles the full matrix.
    let mut row = String::from("dataset");
    for m in &output.methods {
        row.push(',');
        row.push_str(&m.method);
    }
    row.push('\n');
    row.push_str(&output.dataset.replace(',', " "));
    for m in &output.methods {
        row.push(',');
        row.push_str(&m.log_loss.to_string());
    }
    row.push('\n');
    std::fs::write(dir.join("lossrow.csv"), row)?;

    emit_reliability(output, &dir)?;
    Ok(dir)
}

/// Writes one reliability CSV per method plus a legend file carrying each
/// method's test log-loss.
pub fn emit_reliability(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut legend = String::from("method,log_loss\n");
    for m in &output.methods {
        let path = dir.join(format!("reliability_{}.csv", slugify(&m.method)));
        let mut buf = Vec::new();
        m.reliability
            .write_csv(&mut buf)
            .with_context(|| format!("writing {}", path.display()))?;
        std::fs::write(&path, buf)?;
        written.push(path);
        legend.push_str(&format!("{},{}\n", m.method, m.log_loss));
    }
    let legend_path = dir.join("legend.csv");
    std::fs::write(&legend_path, legend)?;
    written.push(legend_path);
    Ok(written)
}
