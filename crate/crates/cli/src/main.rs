use anyhow::{Context, Result};
use bayescal::config::{default_alpha, BenchConfig, DataSource, ExperimentConfig, TrainSection};
use bayescal::experiment::{emit_reliability, run_experiment, slugify, ExperimentOutput};
use bayescal::report::{run_benchmark, stats_report, write_stats_report};
use bayescal_core::stats::LossMatrix;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "bayescal",
    about = "Variational Bayesian neural network vs post-hoc calibration benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic toy dataset and run the full pipeline on it.
    Toy {
        /// Number of generated observations.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Reliability/ECE bin count.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Maximum variational training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a single dataset experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every experiment of a benchmark config and the rank statistics.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Override the benchmark significance level.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the benchmark output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank statistics over an existing loss-matrix CSV.
    Stats {
        /// Loss matrix (datasets x methods) CSV path.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = default_alpha())]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit reliability CSVs from a results.json file.
    Reliability {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn print_results(output: &ExperimentOutput) {
    println!("dataset: {} (seed {})", output.dataset, output.seed);
    println!(
        "rows: {} kept, {} dropped; splits train/val/cal/test = {:?}",
        output.rows_total, output.rows_dropped, output.split_sizes
    );
    println!("{:<14} {:>10} {:>10} {:>10} {:>8}", "method", "log-loss", "brier", "ece", "tau");
    for m in &output.methods {
        println!(
            "{:<14} {:>10.6} {:>10.6} {:>10.6} {:>8}",
            m.method, m.log_loss, m.brier, m.ece, m.epoch_tau
        );
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Toy {
            n,
            seed,
            out,
            bins,
            epochs,
        } => {
            let config = ExperimentConfig {
                name: Some("Toy".into()),
                source: DataSource::Toy { n },
                seed,
                fractions: Default::default(),
                hidden_layers: vec![4, 4],
                bnn: TrainSection {
                    max_epochs: epochs,
                    ..TrainSection::default()
                },
                baseline: TrainSection::default(),
                calibrators: vec![
                    bayescal::config::CalibratorKind::Beta,
                    bayescal::config::CalibratorKind::Isotonic,
                    bayescal::config::CalibratorKind::Logistic,
                ],
                bins,
                out_dir: out,
            };
            let output = run_experiment(&config)?;
            print_results(&output);
        }
        Command::Run { config, seed, out } => {
            let mut config = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            let output = run_experiment(&config)?;
            print_results(&output);
        }
        Command::Bench { config, alpha, out } => {
            let (bench, experiments) = BenchConfig::from_path(&config)?;
            let alpha = alpha.unwrap_or(bench.alpha);
            let out_dir = out.unwrap_or_else(|| bench.out_dir.clone());
            let result = run_benchmark(&experiments, alpha, &out_dir)?;
            println!(
                "benchmark over {} datasets ({} failed)",
                result.matrix.n_datasets(),
                result.failures.len()
            );
            println!(
                "friedman statistic {:.4} (uncorrected {:.4}), p = {:.6e}",
                result.report.friedman.statistic,
                result.report.friedman.uncorrected_statistic,
                result.report.friedman.p_value
            );
            for (m, r) in result
                .report
                .ranks
                .methods
                .iter()
                .zip(result.report.ranks.average_ranks.iter())
            {
                println!("  {m:<14} rank {r:.4}");
            }
            println!("report written to {}", out_dir.display());
        }
        Command::Stats { matrix, alpha, out } => {
            let matrix = LossMatrix::read_csv(&matrix)?;
            let report = stats_report(&matrix, alpha)?;
            write_stats_report(&report, &out)?;
            println!(
                "friedman statistic {:.4}, p = {:.6e}; report written to {}",
                report.friedman.statistic,
                report.friedman.p_value,
                out.display()
            );
        }
        Command::Reliability { results, out } => {
            let text = std::fs::read_to_string(&results)
                .with_context(|| format!("reading {}", results.display()))?;
            let output: ExperimentOutput = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", results.display()))?;
            let dir = out.join(slugify(&output.dataset));
            let files = emit_reliability(&output, &dir)?;
            println!("wrote {} reliability files to {}", files.len(), dir.display());
        }
    }
    Ok(())
}
