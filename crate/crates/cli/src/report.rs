//! Cross-dataset assembly: the loss matrix, rank statistics, Friedman and
//! Wilcoxon-Holm tests, and the consolidated report files.

use crate::config::ExperimentConfig;
use crate::experiment::{run_experiment, ExperimentOutput};
use anyhow::{bail, Context, Result};
use bayescal_core::stats::{
    average_ranks, critical_difference_data, friedman_test, wilcoxon_holm, CdSummary,
    FriedmanResult, LossMatrix, PairwiseSignificance, RankResult,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Consolidated statistics over a loss matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub alpha: f64,
    pub ranks: RankResult,
    pub friedman: FriedmanResult,
    pub pairwise: PairwiseSignificance,
    pub critical_difference: CdSummary,
}

pub fn stats_report(matrix: &LossMatrix, alpha: f64) -> Result<StatsReport> {
    let ranks = average_ranks(matrix)?;
    let friedman = friedman_test(matrix)?;
    let pairwise = wilcoxon_holm(matrix, alpha)?;
    let critical_difference = critical_difference_data(&ranks, &pairwise)?;
    Ok(StatsReport {
        alpha,
        ranks,
        friedman,
        pairwise,
        critical_difference,
    })
}

/// Writes `report.json` and `ranks.csv` into `out_dir`.
pub fn write_stats_report(report: &StatsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let json_path = out_dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    files.push(json_path);

    let mut ranks = String::from("method,avg_rank\n");
    for (m, r) in report
        .ranks
        .methods
        .iter()
        .zip(report.ranks.average_ranks.iter())
    {
        ranks.push_str(&format!("{m},{r}\n"));
    }
    let ranks_path = out_dir.join("ranks.csv");
    std::fs::write(&ranks_path, ranks)?;
    files.push(ranks_path);
    Ok(files)
}

/// One failed dataset inside a benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFailure {
    pub dataset: String,
    pub error: String,
}

/// Benchmark outcome: the assembled matrix statistics plus any per-dataset
/// failures (which do not abort the remaining datasets).
#[derive(Debug, Serialize)]
pub struct BenchOutput {
    pub report: StatsReport,
    pub failures: Vec<DatasetFailure>,
    #[serde(skip)]
    pub matrix: LossMatrix,
    #[serde(skip)]
    pub experiments: Vec<ExperimentOutput>,
}

/// Builds a [`LossMatrix`] from completed experiments; every experiment must
/// expose the same method set.
pub fn assemble_loss_matrix(outputs: &[ExperimentOutput]) -> Result<LossMatrix> {
    if outputs.len() < 2 {
        bail!(
            "need at least 2 completed experiments to assemble a loss matrix, got {}",
            outputs.len()
        );
    }
    let methods: Vec<String> = outputs[0].methods.iter().map(|m| m.method.clone()).collect();
    let mut offenders = Vec::new();
    for out in outputs {
        let got: Vec<String> = out.methods.iter().map(|m| m.method.clone()).collect();
        if got != methods {
            offenders.push(format!("{} has methods {:?}", out.dataset, got));
        }
    }
    if !offenders.is_empty() {
        bail!(
            "inconsistent method sets across datasets (expected {:?}): {}",
            methods,
            offenders.join("; ")
        );
    }
    let datasets: Vec<String> = outputs.iter().map(|o| o.dataset.clone()).collect();
    let values: Vec<f64> = outputs
        .iter()
        .flat_map(|o| o.methods.iter().map(|m| m.log_loss))
        .collect();
    Ok(LossMatrix::new(values, datasets, methods)?)
}

/// Runs every experiment, assembles the loss matrix, computes the rank
/// statistics and writes `lossmatrix.csv`, `report.json` and `ranks.csv`
/// under `out_dir`. A failing dataset is recorded and skipped.
pub fn run_benchmark(
    experiments: &[ExperimentConfig],
    alpha: f64,
    out_dir: &Path,
) -> Result<BenchOutput> {
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for config in experiments {
        let label = config
            .name
            .clone()
            .unwrap_or_else(|| format!("experiment {}", outputs.len() + failures.len()));
        match run_experiment(config) {
            Ok(out) => outputs.push(out),
            Err(err) => {
                log::error!("{label}: {err:#}");
                failures.push(DatasetFailure {
                    dataset: label,
                    error: format!("{err:#}"),
                });
            }
        }
    }
    let matrix = assemble_loss_matrix(&outputs)
        .context("assembling the benchmark loss matrix")?;

    std::fs::create_dir_all(out_dir)?;
    let mut buf = Vec::new();
    matrix.write_csv(&mut buf)?;
    std::fs::write(out_dir.join("lossmatrix.csv"), buf)?;

    let report = stats_report(&matrix, alpha)?;
    write_stats_report(&report, out_dir)?;
    if !failures.is_empty() {
        std::fs::write(
            out_dir.join("failures.json"),
            serde_json::to_string_pretty(&failures)?,
        )?;
    }
    Ok(BenchOutput {
        report,
        failures,
        matrix,
        experiments: outputs,
    })
}
