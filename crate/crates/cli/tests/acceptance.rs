//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`). Tolerances are pinned in
//! code next to the assertions.
//!
//! `criterion_3_table2_statistics` is expected to fail on the published
//! rank row: the published table rounds losses to six decimals, which
//! creates exact ties that average-rank handling resolves differently from
//! the unrounded values behind the original row. The Friedman bracket in
//! the same criterion passes. See the repository notes for the analysis.

use bayescal::config::{CalibratorKind, DataSource, ExperimentConfig, TrainSection};
use bayescal::experiment::run_experiment;
use bayescal_core::calibration::{fit_beta, fit_isotonic, fit_logistic, BetaCalibrator, ScoreSet};
use bayescal_core::data::{
    binarize_majority, generate_toy, standardize, stratified_split, yeo_johnson, SplitFractions,
};
use bayescal_core::metrics::{brier_score, ece, log_loss, PredictionSet};
use bayescal_core::nn::{self, BinaryBatch, NetworkArch, NetworkParams};
use bayescal_core::rng::{derive_seed, Prng};
use bayescal_core::stats::{average_ranks, friedman_test, LossMatrix};
use bayescal_core::vi::{
    elbo_estimate, elbo_gradient_estimate, fit_bnn, predictive_probabilities, BnnPosterior,
    NoiseDraw, TrainConfig, VariationalParams,
};
use std::time::Instant;

fn pass(name: &str, detail: &str) {
    println!("ACCEPTANCE {name}: PASS ({detail})");
}

fn fail(name: &str, detail: &str) -> ! {
    println!("ACCEPTANCE {name}: FAIL ({detail})");
    panic!("acceptance criterion {name} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness against central finite differences.
// ---------------------------------------------------------------------------

fn fd_gradient<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut t = x.to_vec();
    for i in 0..x.len() {
        let orig = t[i];
        t[i] = orig + h;
        let up = f(&t);
        t[i] = orig - h;
        let down = f(&t);
        t[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |acc, w| acc.max(w.abs()));
    got.iter()
        .zip(want.iter())
        .map(|(g, w)| (g - w).abs() / w.abs().max(1e-4 * scale.max(1.0)))
        .fold(0.0, f64::max)
}

fn random_lambda(m: usize, k: usize, rng: &mut Prng) -> VariationalParams {
    let mu: Vec<f64> = (0..m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let d: Vec<f64> = (0..m).map(|_| rng.uniform_in(0.3, 1.2)).collect();
    let b: Vec<f64> = (0..m * k).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
    VariationalParams::new(mu, d, b, k).unwrap()
}

#[test]
fn criterion_1_gradient_correctness() {
    let name = "gradient-correctness";
    let start = Instant::now();
    let mut rng = Prng::new(1001);
    let archs = [vec![2, 4, 1], vec![3, 4, 1], vec![5, 4, 1], vec![2, 3, 1], vec![4, 4, 1]];

    // grad_log_likelihood vs finite differences of log_likelihood.
    let mut nn_instances = 0;
    for sizes in &archs {
        let arch = NetworkArch::new(sizes.clone()).unwrap();
        let m = arch.param_count();
        assert!(m <= 30);
        for _ in 0..4 {
            nn_instances += 1;
            let theta: Vec<f64> = (0..m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let params = NetworkParams::new(theta.clone(), arch.clone()).unwrap();
            let n = 10;
            let p = arch.input_dim();
            let feats: Vec<f64> = (0..n * p).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
            let batch = BinaryBatch::new(feats, p, labels).unwrap();
            let grad = nn::grad_log_likelihood(&params, &batch).unwrap();
            let fd = fd_gradient(&theta, 1e-5, |t| {
                let q = NetworkParams::new(t.to_vec(), arch.clone()).unwrap();
                nn::log_likelihood(&q, &batch).unwrap()
            });
            let err = max_rel_err(&grad, &fd);
            if err >= 1e-4 {
                fail(name, &format!("log-likelihood gradient rel err {err}"));
            }
        }
    }

    // elbo_gradient_estimate vs finite differences under common random numbers.
    let mut elbo_instances = 0;
    for sizes in &archs {
        let arch = NetworkArch::new(sizes.clone()).unwrap();
        let m = arch.param_count();
        for k in 0..=3usize {
            elbo_instances += 1;
            let lambda = random_lambda(m, k, &mut rng);
            let n = 10;
            let p = arch.input_dim();
            let feats: Vec<f64> = (0..n * p).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
            let batch = BinaryBatch::new(feats, p, labels).unwrap();
            let target = BnnPosterior::new(&arch, &batch);
            let eps = NoiseDraw::sample(&mut rng, m, k);
            let grad = elbo_gradient_estimate(&lambda, &target, &eps).unwrap();
            let flat = lambda.to_flat();
            let fd = fd_gradient(&flat, 1e-5, |t| {
                let l = VariationalParams::from_flat(t, m, k).unwrap();
                elbo_estimate(&l, &target, &eps).unwrap()
            });
            let err = max_rel_err(&grad, &fd);
            if err >= 1e-4 {
                fail(name, &format!("ELBO gradient rel err {err} (m={m}, K={k})"));
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        fail(name, &format!("runtime {elapsed:.1}s exceeds 10s"));
    }
    pass(
        name,
        &format!(
            "{nn_instances} likelihood + {elbo_instances} ELBO instances, max rel err < 1e-4, {elapsed:.2}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: factor-Gaussian correctness.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_factor_gaussian_correctness() {
    let name = "factor-gaussian-correctness";
    let mut rng = Prng::new(2002);

    // log_q against a dense Cholesky oracle on m <= 5.
    for m in 2..=5usize {
        for k in 0..m.min(4) {
            for _ in 0..4 {
                let lambda = random_lambda(m, k, &mut rng);
                let theta: Vec<f64> = (0..m).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
                let b = nalgebra::DMatrix::from_fn(m, k, |i, j| lambda.b()[i * k + j]);
                let mut cov = &b * b.transpose();
                for i in 0..m {
                    cov[(i, i)] += lambda.d()[i] * lambda.d()[i];
                }
                let chol = nalgebra::Cholesky::new(cov).unwrap();
                let v = nalgebra::DVector::from_vec(
                    theta
                        .iter()
                        .zip(lambda.mu().iter())
                        .map(|(t, mu)| t - mu)
                        .collect::<Vec<_>>(),
                );
                let log_det = 2.0 * chol.l().diagonal().map(|x| x.ln()).sum();
                let quad = v.dot(&chol.solve(&v));
                let oracle =
                    -0.5 * ((m as f64) * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
                let got = bayescal_core::vi::log_q(&lambda, &theta).unwrap();
                if (got - oracle).abs() > 1e-10 {
                    fail(
                        name,
                        &format!("log_q vs dense oracle: |{got} - {oracle}| > 1e-10"),
                    );
                }
            }
        }
    }

    // Sampling moments over 1e5 draws.
    let (m, k) = (5usize, 2usize);
    let lambda = random_lambda(m, k, &mut rng);
    let n = 100_000usize;
    let mut mean = vec![0.0; m];
    let mut second = vec![0.0; m * m];
    for _ in 0..n {
        let eps = NoiseDraw::sample(&mut rng, m, k);
        let theta = bayescal_core::vi::sample_theta(&lambda, &eps).unwrap();
        for i in 0..m {
            mean[i] += theta[i];
            for j in 0..m {
                second[i * m + j] += theta[i] * theta[j];
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= n as f64;
    }
    let b = nalgebra::DMatrix::from_fn(m, k, |i, j| lambda.b()[i * k + j]);
    let mut sigma = &b * b.transpose();
    for i in 0..m {
        sigma[(i, i)] += lambda.d()[i] * lambda.d()[i];
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in 0..m {
            let emp = second[i * m + j] / n as f64 - mean[i] * mean[j];
            num += (emp - sigma[(i, j)]).powi(2);
            den += sigma[(i, j)].powi(2);
        }
    }
    let fro = (num / den).sqrt();
    if fro >= 0.05 {
        fail(name, &format!("covariance Frobenius rel err {fro} >= 5%"));
    }
    pass(
        name,
        &format!("dense log_q oracle to 1e-10; covariance Frobenius rel err {fro:.4}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: published-table statistics reproduction.
// ---------------------------------------------------------------------------

const TABLE2: [[f64; 5]; 21] = [
    [0.597890, 0.598148, 0.691808, 0.602227, 0.615603],
    [0.098068, 0.080771, 0.092153, 0.089347, 0.069333],
    [0.491384, 0.522863, 0.897678, 0.437511, 0.457618],
    [0.525405, 0.517368, 0.532982, 0.517461, 0.565519],
    [0.385311, 0.310725, 0.334547, 0.308752, 0.330256],
    [0.410117, 0.410120, 0.410120, 0.410120, 0.012053],
    [0.549391, 0.549391, 0.549391, 0.549391, 0.065981],
    [0.015198, 0.015066, 0.015491, 0.022324, 0.012077],
    [0.056259, 0.052115, 0.165397, 0.121016, 0.067857],
    [0.325083, 0.325096, 0.325096, 0.325096, 0.000206],
    [0.092498, 0.070683, 0.166497, 0.048465, 0.073144],
    [0.035914, 0.037741, 0.037741, 0.037741, 0.033184],
    [0.086171, 0.056051, 0.086846, 0.063662, 0.047854],
    [0.071376, 0.072884, 0.091231, 0.082372, 0.085377],
    [0.225907, 0.211673, 0.212747, 0.213790, 0.235523],
    [0.376422, 0.377564, 0.401984, 0.391937, 0.375313],
    [0.107625, 0.331832, 0.310363, 0.390933, 0.091739],
    [0.239015, 0.234735, 0.240671, 0.265519, 0.238321],
    [0.080406, 0.164898, 0.156011, 0.176233, 0.070994],
    [0.584846, 0.614227, 1.777795, 0.594910, 0.541680],
    [0.594895, 0.583243, 0.806812, 0.561925, 0.569832],
];

#[test]
fn criterion_3_table2_statistics() {
    let name = "table2-statistics";
    let start = Instant::now();
    let matrix = LossMatrix::new(
        TABLE2.iter().flatten().copied().collect(),
        (0..21).map(|i| format!("d{i:02}")).collect(),
        ["Uncalibrated", "Beta", "Isotonic", "Logistic", "VarBayes"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .unwrap();

    let friedman = friedman_test(&matrix).unwrap();
    if !(22.0..=24.0).contains(&friedman.statistic) || friedman.p_value >= 5e-4 {
        fail(
            name,
            &format!(
                "friedman statistic {} / p {} outside [22, 24] / < 5e-4",
                friedman.statistic, friedman.p_value
            ),
        );
    }
    println!(
        "ACCEPTANCE {name} (friedman): PASS (statistic {:.4} in [22, 24], p {:.3e} < 5e-4)",
        friedman.statistic, friedman.p_value
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "runtime {elapsed:.3}s exceeds 1s");

    // Published rank row. The table's six-decimal rounding introduces exact
    // ties (e.g. the Landsat row repeats 0.549391 across four methods) that
    // average-rank handling necessarily resolves differently from the
    // unrounded values behind the published row; no deterministic tie rule
    // reproduces it. Asserted as stated; expected to fail. Analysis in the
    // decisions ledger.
    let published = [2.7619, 2.6667, 4.2857, 3.1905, 2.0952];
    let ranks = average_ranks(&matrix).unwrap();
    let mut mismatches = Vec::new();
    for (i, (got, want)) in ranks
        .average_ranks
        .iter()
        .zip(published.iter())
        .enumerate()
    {
        if (got - want).abs() > 0.0001 {
            mismatches.push(format!(
                "{}: got {:.4}, published {:.4}",
                ranks.methods[i], got, want
            ));
        }
    }
    if !mismatches.is_empty() {
        fail(
            name,
            &format!(
                "published rank row not reproducible from the rounded table ({})",
                mismatches.join("; ")
            ),
        );
    }
    pass(name, "rank row and friedman bracket reproduced");
}

// ---------------------------------------------------------------------------
// Criterion 4: toy-pipeline reproduction.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_toy_pipeline_reproduction() {
    let name = "toy-pipeline";
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let seed = 1u64;
    let config = ExperimentConfig {
        name: Some("Toy".into()),
        source: DataSource::Toy { n: 10_000 },
        seed,
        fractions: SplitFractions::default(),
        hidden_layers: vec![4, 4],
        bnn: TrainSection::default(),
        baseline: TrainSection {
            // The paper trains with 1e-3 or 1e-2; the toy surface needs the
            // larger rate to converge within the half-budget rule.
            learning_rate: Some(1e-2),
            ..TrainSection::default()
        },
        calibrators: vec![
            CalibratorKind::Beta,
            CalibratorKind::Isotonic,
            CalibratorKind::Logistic,
        ],
        bins: 10,
        out_dir: dir.path().to_path_buf(),
    };
    let output = run_experiment(&config).unwrap();
    let vb = output.method("VarBayes").unwrap().log_loss;
    let unc = output.method("Uncalibrated").unwrap().log_loss;
    if (vb - 0.375313).abs() > 0.03 {
        fail(name, &format!("VarBayes log-loss {vb} outside 0.375313 +- 0.03"));
    }
    if (unc - 0.376422).abs() > 0.03 {
        fail(name, &format!("Uncalibrated log-loss {unc} outside 0.376422 +- 0.03"));
    }

    // Fig-1(c) pattern: predictive probabilities near 0.5 concentrate along
    // the decision boundary x1 = t(x2). Replaying the experiment's seed
    // streams reconstructs the identical BNN fit and the raw test rows.
    let raw = generate_toy(10_000, derive_seed(seed, "toy-data"));
    let labels = binarize_majority(&raw.target);
    let splits = stratified_split(
        &raw.features,
        2,
        &labels,
        &SplitFractions::default(),
        derive_seed(seed, "split"),
    )
    .unwrap();
    let raw_test = splits.test().clone();
    let splits = standardize(splits);
    let arch = NetworkArch::new(vec![2, 4, 4, 1]).unwrap();
    let (lambda, _) = fit_bnn(&splits, &arch, &config.bnn_config()).unwrap();
    let probs = predictive_probabilities(
        &lambda,
        &arch,
        splits.test(),
        config.bnn_config().draws_test,
        derive_seed(seed, "test-eval"),
    )
    .unwrap();

    let mut band = Vec::new();
    let mut far = Vec::new();
    for i in 0..raw_test.len() {
        let row = raw_test.row(i);
        let u = yeo_johnson(row[1], -1.0) - row[0];
        let gap = (probs[i] - 0.5).abs();
        if u.abs() < 0.5 {
            band.push(gap);
        } else if u.abs() >= 1.5 {
            far.push(gap);
        }
    }
    assert!(band.len() > 50 && far.len() > 50, "bands are populated");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (band_gap, far_gap) = (mean(&band), mean(&far));
    if band_gap >= far_gap {
        fail(
            name,
            &format!("boundary-band |p - 0.5| {band_gap:.3} not below far-band {far_gap:.3}"),
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 300.0 {
        fail(name, &format!("runtime {elapsed:.0}s exceeds 5 minutes"));
    }
    pass(
        name,
        &format!(
            "VarBayes {vb:.6}, Uncalibrated {unc:.6}, band gap {band_gap:.3} < far gap {far_gap:.3}, {elapsed:.0}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: calibrator oracles.
// ---------------------------------------------------------------------------

fn isotonic_brute_force(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..(1u32 << (n - 1)) {
        let mut fitted = vec![0.0; n];
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut feasible = true;
        for end in 0..n {
            if end != n - 1 && (mask >> end) & 1 == 0 {
                continue;
            }
            let mean: f64 = y[start..=end].iter().sum::<f64>() / (end - start + 1) as f64;
            if mean < prev {
                feasible = false;
                break;
            }
            for f in fitted[start..=end].iter_mut() {
                *f = mean;
            }
            prev = mean;
            start = end + 1;
        }
        if !feasible {
            continue;
        }
        let sse: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(s, _)| sse < *s - 1e-15) {
            best = Some((sse, fitted));
        }
    }
    best.unwrap().1
}

fn irls(features: &[Vec<f64>], labels: &[u8], iters: usize) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let n = features.len();
    let d = features[0].len() + 1;
    let x = DMatrix::from_fn(n, d, |i, j| if j < d - 1 { features[i][j] } else { 1.0 });
    let mut beta = DVector::zeros(d);
    for _ in 0..iters {
        let eta = &x * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = p.map(|pi| (pi * (1.0 - pi)).max(1e-12));
        let z = DVector::from_fn(n, |i, _| eta[i] + (f64::from(labels[i]) - p[i]) / w[i]);
        let xtw = DMatrix::from_fn(d, n, |j, i| x[(i, j)] * w[i]);
        let xtwx = &xtw * &x;
        let xtwz = &xtw * z;
        beta = xtwx.lu().solve(&xtwz).expect("solvable");
    }
    beta.iter().copied().collect()
}

#[test]
fn criterion_5_calibrator_oracles() {
    let name = "calibrator-oracles";
    let mut rng = Prng::new(5005);

    // PAV against exhaustive monotone-fit minimization, N <= 12.
    for trial in 0..6 {
        let n = 8 + (trial % 5);
        let mut scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
        let cal = fit_isotonic(&ScoreSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
        let oracle = isotonic_brute_force(&y);
        for (got, want) in cal.values.iter().zip(oracle.iter()) {
            if (got - want).abs() > 1e-10 {
                fail(name, &format!("PAV {got} vs exhaustive {want}"));
            }
        }
    }

    // Logistic fit against IRLS.
    let n = 50;
    let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let labels: Vec<u8> = scores
        .iter()
        .map(|&s| u8::from(rng.uniform() < 0.2 + 0.6 * s))
        .collect();
    let platt = fit_logistic(&ScoreSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
    let oracle = irls(
        &scores.iter().map(|&s| vec![s]).collect::<Vec<_>>(),
        &labels,
        60,
    );
    if (platt.gamma - oracle[0]).abs() > 1e-6 || (platt.delta - oracle[1]).abs() > 1e-6 {
        fail(
            name,
            &format!(
                "Platt ({}, {}) vs IRLS ({}, {})",
                platt.gamma, platt.delta, oracle[0], oracle[1]
            ),
        );
    }

    // Beta fit against two-feature IRLS.
    let n = 200;
    let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let labels: Vec<u8> = scores
        .iter()
        .map(|&s| u8::from(rng.uniform() < 0.25 + 0.5 * s))
        .collect();
    let beta = fit_beta(&ScoreSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
    let feats: Vec<Vec<f64>> = scores
        .iter()
        .map(|&s| {
            let sc = s.clamp(1e-12, 1.0 - 1e-12);
            vec![sc.ln(), -(1.0 - sc).ln()]
        })
        .collect();
    let oracle = irls(&feats, &labels, 60);
    assert!(oracle[0] >= 0.0 && oracle[1] >= 0.0, "no repair expected here");
    if (beta.a - oracle[0]).abs() > 1e-6
        || (beta.b - oracle[1]).abs() > 1e-6
        || (beta.c - oracle[2]).abs() > 1e-6
    {
        fail(
            name,
            &format!(
                "beta ({}, {}, {}) vs IRLS ({}, {}, {})",
                beta.a, beta.b, beta.c, oracle[0], oracle[1], oracle[2]
            ),
        );
    }

    // Identity parameters on a 101-point grid.
    let identity = BetaCalibrator { a: 1.0, b: 1.0, c: 0.0 };
    for i in 0..=100 {
        let s = i as f64 / 100.0;
        if (identity.map(s) - s).abs() > 1e-12 {
            fail(name, &format!("beta identity off at s = {s}: {}", identity.map(s)));
        }
    }
    pass(name, "PAV exhaustive 1e-10, IRLS 1e-6, identity grid 1e-12");
}

// ---------------------------------------------------------------------------
// Criterion 6: metric identities.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_metric_identities() {
    let name = "metric-identities";
    let half = PredictionSet::new(vec![0.5; 8], vec![1, 0, 1, 0, 1, 1, 0, 0]).unwrap();
    let ll = log_loss(&half).unwrap();
    if (ll - std::f64::consts::LN_2).abs() > 1e-12 {
        fail(name, &format!("log_loss(all 0.5) = {ll} != ln 2"));
    }
    if brier_score(&half) != 0.25 {
        fail(name, &format!("brier(all 0.5) = {} != 0.25", brier_score(&half)));
    }

    // Perfectly calibrated synthetic data: ECE within binomial noise.
    let mut rng = Prng::new(6006);
    let n = 50_000;
    let probs: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let labels: Vec<u8> = probs.iter().map(|&p| u8::from(rng.uniform() < p)).collect();
    let pset = PredictionSet::new(probs.clone(), labels.clone()).unwrap();
    let e = ece(&pset, 10).unwrap();
    // Ten bins of ~5000 samples each: per-bin gap SE ~ 0.5/sqrt(5000), and
    // the weighted absolute sum stays well under 0.01.
    if e >= 0.01 {
        fail(name, &format!("calibrated-synthetic ECE {e} >= 0.01"));
    }

    // Single-bin identity, bitwise: same summation order as the metric.
    let mean_p: f64 = probs.iter().sum::<f64>() / n as f64;
    let mean_y: f64 = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / n as f64;
    let identity = (mean_y - mean_p).abs();
    let got = ece(&pset, 1).unwrap();
    if got != identity {
        fail(name, &format!("ece(p, 1) = {got} != |mean(y) - mean(p)| = {identity}"));
    }
    pass(
        name,
        &format!("ln2/0.25 exact, calibrated ECE {e:.4} < 0.01, single-bin identity exact"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: tabular-file benchmark substitute.
// ---------------------------------------------------------------------------

/// Writes a small tabular dataset in UCI style (CSV + schema JSON) and
/// returns the schema path.
fn write_tabular_dataset(
    dir: &std::path::Path,
    name: &str,
    rows: &[String],
    columns: &[(&str, &str)],
) -> std::path::PathBuf {
    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, rows.join("\n") + "\n").unwrap();
    let cols: Vec<String> = columns
        .iter()
        .map(|(n, k)| format!(r#"{{"name": "{n}", "kind": "{k}"}}"#))
        .collect();
    let schema = format!(
        r#"{{"name": "{name}", "path": "{name}.csv", "target": "class", "columns": [{}], "separator": ","}}"#,
        cols.join(", ")
    );
    let schema_path = dir.join(format!("{name}.schema.json"));
    std::fs::write(&schema_path, schema).unwrap();
    schema_path
}

fn logistic_fn(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn criterion_7_tabular_benchmark_substitute() {
    let name = "tabular-benchmark-substitute";
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Prng::new(7007);

    // Three small datasets in the spirit of the published benchmark:
    // a linear signal with noise features, a mixed numeric/categorical file
    // with missing cells, and a multiplicative (XOR-like) interaction.
    let mut rows_a = Vec::new();
    for _ in 0..450 {
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let p = logistic_fn(1.8 * x[0] - 1.4 * x[1] + 0.6 * x[2] + 0.2);
        let y = if rng.uniform() < p { "pos" } else { "neg" };
        rows_a.push(format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{y}",
            x[0], x[1], x[2], x[3], x[4]
        ));
    }
    let schema_a = write_tabular_dataset(
        dir.path(),
        "synth-linear",
        &rows_a,
        &[
            ("f1", "numeric"),
            ("f2", "numeric"),
            ("f3", "numeric"),
            ("f4", "numeric"),
            ("f5", "numeric"),
            ("class", "categorical"),
        ],
    );

    let mut rows_b = Vec::new();
    for i in 0..500 {
        let x1 = rng.normal();
        let x2 = rng.normal();
        let cat = match (rng.uniform() * 3.0) as usize {
            0 => "low",
            1 => "mid",
            _ => "high",
        };
        let shift = match cat {
            "low" => -1.0,
            "mid" => 0.0,
            _ => 1.0,
        };
        let p = logistic_fn(1.5 * x1 + shift - 0.8 * x2);
        let y = if rng.uniform() < p { "granted" } else { "denied" };
        // A few missing cells, dropped by the loader.
        if i % 61 == 0 {
            rows_b.push(format!("?,{x2:.6},{cat},{y}"));
        } else {
            rows_b.push(format!("{x1:.6},{x2:.6},{cat},{y}"));
        }
    }
    let schema_b = write_tabular_dataset(
        dir.path(),
        "synth-credit",
        &rows_b,
        &[
            ("amount", "numeric"),
            ("ratio", "numeric"),
            ("band", "categorical"),
            ("class", "categorical"),
        ],
    );

    let mut rows_c = Vec::new();
    for _ in 0..600 {
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let p = logistic_fn(2.0 * x[0] * x[1] + 0.5 * x[2]);
        let y = if rng.uniform() < p { "1" } else { "0" };
        rows_c.push(format!(
            "{:.6},{:.6},{:.6},{:.6},{y}",
            x[0], x[1], x[2], x[3]
        ));
    }
    let schema_c = write_tabular_dataset(
        dir.path(),
        "synth-wave",
        &rows_c,
        &[
            ("w1", "numeric"),
            ("w2", "numeric"),
            ("w3", "numeric"),
            ("w4", "numeric"),
            ("class", "categorical"),
        ],
    );

    let mut summaries = Vec::new();
    for (i, schema) in [schema_a, schema_b, schema_c].iter().enumerate() {
        let config = ExperimentConfig {
            name: None,
            source: DataSource::Schema { path: schema.clone() },
            seed: 100 + i as u64,
            fractions: SplitFractions::default(),
            hidden_layers: vec![4, 4],
            bnn: TrainSection {
                max_epochs: Some(600),
                ..TrainSection::default()
            },
            baseline: TrainSection {
                max_epochs: Some(300),
                learning_rate: Some(1e-2),
                ..TrainSection::default()
            },
            calibrators: vec![
                CalibratorKind::Beta,
                CalibratorKind::Isotonic,
                CalibratorKind::Logistic,
            ],
            bins: 10,
            out_dir: dir.path().join("out"),
        };
        let output = run_experiment(&config).unwrap();
        if output.methods.len() != 5 {
            fail(name, &format!("{}: {} methods", output.dataset, output.methods.len()));
        }
        for m in &output.methods {
            if !m.log_loss.is_finite() || !m.brier.is_finite() || !m.ece.is_finite() {
                fail(name, &format!("{}: non-finite metric for {}", output.dataset, m.method));
            }
        }
        let best = output
            .methods
            .iter()
            .map(|m| m.log_loss)
            .fold(f64::INFINITY, f64::min);
        let vb = output.method("VarBayes").unwrap().log_loss;
        if vb - best > 0.15 {
            fail(
                name,
                &format!(
                    "{}: VarBayes {vb:.4} more than 0.15 above best {best:.4}",
                    output.dataset
                ),
            );
        }
        summaries.push(format!("{}: VarBayes {vb:.4} vs best {best:.4}", output.dataset));
    }
    pass(name, &summaries.join("; "));
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism of output files.
// ---------------------------------------------------------------------------

fn dir_digest(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                entries.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn criterion_8_determinism() {
    let name = "determinism";
    let make_config = |out: &std::path::Path| ExperimentConfig {
        name: Some("Toy".into()),
        source: DataSource::Toy { n: 1_200 },
        seed: 77,
        fractions: SplitFractions::default(),
        hidden_layers: vec![4, 4],
        bnn: TrainSection {
            max_epochs: Some(80),
            ..TrainSection::default()
        },
        baseline: TrainSection {
            max_epochs: Some(40),
            ..TrainSection::default()
        },
        calibrators: vec![
            CalibratorKind::Beta,
            CalibratorKind::Isotonic,
            CalibratorKind::Logistic,
        ],
        bins: 10,
        out_dir: out.to_path_buf(),
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_experiment(&make_config(dir_a.path())).unwrap();
    run_experiment(&make_config(dir_b.path())).unwrap();
    let da = dir_digest(dir_a.path());
    let db = dir_digest(dir_b.path());
    if da.len() != db.len() {
        fail(name, "rerun produced a different file set");
    }
    let mut n_files = 0;
    for ((name_a, bytes_a), (name_b, bytes_b)) in da.iter().zip(db.iter()) {
        if name_a != name_b || bytes_a != bytes_b {
            fail(name, &format!("file {name_a} differs between reruns"));
        }
        n_files += 1;
    }
    pass(name, &format!("{n_files} output files bit-identical across reruns"));
}
