//! Post-hoc calibrators mapping raw classifier scores in [0, 1] to
//! calibrated probabilities: logistic (Platt scaling), isotonic
//! (pool-adjacent-violators) and beta calibration.
//!
//! Applied outputs are clipped into `[PROB_FLOOR, 1 - PROB_FLOOR]` so that
//! log-loss stays finite even when the isotonic fit emits exact 0/1 values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default output clip keeping log-loss finite.
pub const PROB_FLOOR: f64 = 1e-6;

/// Scores are pulled into `[SCORE_EPS, 1 - SCORE_EPS]` before log transforms.
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("empty calibration set")]
    Empty,
    #[error("lengths differ: {scores} scores, {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
    #[error("degenerate fit: calibration labels contain a single class")]
    SingleClass,
}

/// Classifier output probabilities on the calibration split with labels.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, CalibrationError> {
        if scores.len() != labels.len() {
            return Err(CalibrationError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(CalibrationError::Empty);
        }
        if let Some(&s) = scores.iter().find(|&&s| !(0.0..=1.0).contains(&s) || !s.is_finite()) {
            return Err(CalibrationError::ScoreOutOfRange(s));
        }
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(CalibrationError::NonBinaryLabel(y));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|&y| y == 0) && self.labels.iter().any(|&y| y == 1)
    }
}

/// Platt map `mu(s) = 1 / (1 + exp(-(gamma s + delta)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticCalibrator {
    pub gamma: f64,
    pub delta: f64,
}

/// Right-continuous step map from the isotonic regression of labels on scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCalibrator {
    /// Strictly increasing score thresholds.
    pub breakpoints: Vec<f64>,
    /// Non-decreasing fitted probabilities, one per breakpoint.
    pub values: Vec<f64>,
}

/// Beta map `mu(s) = 1 / (1 + 1 / (e^c s^a (1 - s)^{-b}))` with `a, b >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCalibrator {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Any fitted calibrator; serializes as `{"type": ..., "parameters": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "parameters", rename_all = "lowercase")]
pub enum Calibrator {
    Logistic(LogisticCalibrator),
    Isotonic(IsotonicCalibrator),
    Beta(BetaCalibrator),
}

impl Calibrator {
    pub fn apply(&self, score: f64) -> Result<f64, CalibrationError> {
        match self {
            Calibrator::Logistic(c) => c.apply(score),
            Calibrator::Isotonic(c) => c.apply(score),
            Calibrator::Beta(c) => c.apply(score),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Calibrator::Logistic(_) => "Logistic",
            Calibrator::Isotonic(_) => "Isotonic",
            Calibrator::Beta(_) => "Beta",
        }
    }
}

fn check_score(score: f64) -> Result<(), CalibrationError> {
    if !(0.0..=1.0).contains(&score) || !score.is_finite() {
        return Err(CalibrationError::ScoreOutOfRange(score));
    }
    Ok(())
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

impl LogisticCalibrator {
    /// Unclipped map value.
    pub fn map(&self, s: f64) -> f64 {
        crate::nn::logistic(self.gamma * s + self.delta)
    }

    pub fn apply(&self, score: f64) -> Result<f64, CalibrationError> {
        check_score(score)?;
        Ok(clip(self.map(score)))
    }
}

impl IsotonicCalibrator {
    /// Value of the largest breakpoint at or below `s`; the first value when
    /// `s` lies below every breakpoint (constant extrapolation both sides).
    pub fn map(&self, s: f64) -> f64 {
        match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&s).unwrap())
        {
            Ok(i) => self.values[i],
            Err(0) => self.values[0],
            Err(i) => self.values[i - 1],
        }
    }

    pub fn apply(&self, score: f64) -> Result<f64, CalibrationError> {
        check_score(score)?;
        Ok(clip(self.map(score)))
    }
}

impl BetaCalibrator {
    /// Unclipped map value; `(a, b, c) = (1, 1, 0)` is the identity.
    /// The endpoints follow the monotone limits (`0 * ln 0` terms vanish),
    /// so no score clamping is needed here, only in the fit.
    pub fn map(&self, s: f64) -> f64 {
        let t1 = if self.a == 0.0 { 0.0 } else { self.a * s.ln() };
        let t2 = if self.b == 0.0 { 0.0 } else { -self.b * (1.0 - s).ln() };
        crate::nn::logistic(t1 + t2 + self.c)
    }

    pub fn apply(&self, score: f64) -> Result<f64, CalibrationError> {
        check_score(score)?;
        Ok(clip(self.map(score)))
    }
}

/// Bernoulli negative log-likelihood of a linear logistic model over the
/// given feature rows (intercept last).
fn logistic_nll(features: &[Vec<f64>], labels: &[u8], beta: &[f64]) -> f64 {
    let mut nll = 0.0;
    for (row, &y) in features.iter().zip(labels.iter()) {
        let mut z = beta[row.len()];
        for (x, b) in row.iter().zip(beta.iter()) {
            z += x * b;
        }
        // -log p(y | z) = softplus(z) - y z, stable on both tails
        let sp = if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        };
        nll += sp - f64::from(y) * z;
    }
    nll
}

/// Damped Newton MLE of a logistic regression with intercept.
/// Returns the coefficient vector with the intercept last. Stops at gradient
/// norm 1e-8 or 100 iterations, halving the step while the NLL worsens.
fn newton_logistic(features: &[Vec<f64>], labels: &[u8]) -> Vec<f64> {
    let d = features.first().map_or(0, |r| r.len());
    let dim = d + 1;
    let mut beta = vec![0.0; dim];
    let mut nll = logistic_nll(features, labels, &beta);

    for _ in 0..100 {
        // Gradient and Hessian of the NLL.
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for (row, &y) in features.iter().zip(labels.iter()) {
            let mut z = beta[d];
            for (x, b) in row.iter().zip(beta.iter()) {
                z += x * b;
            }
            let p = crate::nn::logistic(z);
            let r = p - f64::from(y);
            let w = p * (1.0 - p);
            for i in 0..dim {
                let xi = if i < d { row[i] } else { 1.0 };
                grad[i] += r * xi;
                for j in 0..=i {
                    let xj = if j < d { row[j] } else { 1.0 };
                    hess[i * dim + j] += w * xi * xj;
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                hess[i * dim + j] = hess[j * dim + i];
            }
            // Tiny ridge so degenerate designs (e.g. constant scores) stay solvable.
            hess[i * dim + i] += 1e-10;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-8 {
            break;
        }
        let step = solve_dense(dim, &mut hess, &grad);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b - scale * s)
                .collect();
            let trial_nll = logistic_nll(features, labels, &trial);
            if trial_nll <= nll {
                beta = trial;
                nll = trial_nll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    beta
}

/// Gaussian elimination with partial pivoting; `a` is destroyed.
fn solve_dense(n: usize, a: &mut [f64], b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            x.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= factor * a[col * n + c];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for c in (col + 1)..n {
            s -= a[col * n + c] * x[c];
        }
        x[col] = s / a[col * n + col];
    }
    x
}

/// Platt scaling: maximum-likelihood `(gamma, delta)` by damped Newton.
pub fn fit_logistic(cal: &ScoreSet) -> Result<LogisticCalibrator, CalibrationError> {
    if !cal.has_both_classes() {
        return Err(CalibrationError::SingleClass);
    }
    let features: Vec<Vec<f64>> = cal.scores().iter().map(|&s| vec![s]).collect();
    let beta = newton_logistic(&features, cal.labels());
    Ok(LogisticCalibrator {
        gamma: beta[0],
        delta: beta[1],
    })
}

/// Isotonic regression of labels on scores by pool-adjacent-violators.
/// Ties in score are pre-pooled by averaging their labels, so the fit is
/// independent of input order.
pub fn fit_isotonic(cal: &ScoreSet) -> Result<IsotonicCalibrator, CalibrationError> {
    let targets: Vec<f64> = cal.labels().iter().map(|&y| f64::from(y)).collect();
    Ok(isotonic_regression(cal.scores(), &targets))
}

/// Weighted PAV over real-valued targets; `fit_isotonic` is the binary-label
/// front end and the idempotence property holds at this level.
fn isotonic_regression(scores: &[f64], targets: &[f64]) -> IsotonicCalibrator {
    let mut pairs: Vec<(f64, f64)> = scores
        .iter()
        .zip(targets.iter())
        .map(|(&s, &y)| (s, y))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Pre-pool identical scores.
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        let mut sum = 0.0;
        let mut count = 0.0;
        while i < pairs.len() && pairs[i].0 == s {
            sum += pairs[i].1;
            count += 1.0;
            i += 1;
        }
        breakpoints.push(s);
        means.push(sum / count);
        weights.push(count);
    }

    // Weighted PAV: blocks of (value, weight, span) merged left while the
    // monotonicity constraint is violated.
    let mut val: Vec<f64> = Vec::with_capacity(means.len());
    let mut wgt: Vec<f64> = Vec::with_capacity(means.len());
    let mut span: Vec<usize> = Vec::with_capacity(means.len());
    for (v, w) in means.iter().zip(weights.iter()) {
        val.push(*v);
        wgt.push(*w);
        span.push(1);
        while val.len() > 1 && val[val.len() - 2] > val[val.len() - 1] {
            let (v2, w2, s2) = (val.pop().unwrap(), wgt.pop().unwrap(), span.pop().unwrap());
            let last = val.len() - 1;
            let merged_w = wgt[last] + w2;
            val[last] = (wgt[last] * val[last] + w2 * v2) / merged_w;
            wgt[last] = merged_w;
            span[last] += s2;
        }
    }

    let mut values = Vec::with_capacity(breakpoints.len());
    for (v, s) in val.iter().zip(span.iter()) {
        for _ in 0..*s {
            values.push(*v);
        }
    }
    IsotonicCalibrator {
        breakpoints,
        values,
    }
}

/// Beta calibration: logistic regression on `(ln s, -ln(1 - s))`. A negative
/// coefficient breaks monotonicity, so the offending feature is removed and
/// the model refit with that coefficient pinned to zero.
pub fn fit_beta(cal: &ScoreSet) -> Result<BetaCalibrator, CalibrationError> {
    if !cal.has_both_classes() {
        return Err(CalibrationError::SingleClass);
    }
    let f1: Vec<f64> = cal
        .scores()
        .iter()
        .map(|&s| s.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln())
        .collect();
    let f2: Vec<f64> = cal
        .scores()
        .iter()
        .map(|&s| -(1.0 - s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)).ln())
        .collect();
    let labels = cal.labels();

    let both: Vec<Vec<f64>> = f1.iter().zip(f2.iter()).map(|(&a, &b)| vec![a, b]).collect();
    let beta = newton_logistic(&both, labels);
    let (a, b, c) = (beta[0], beta[1], beta[2]);
    if a >= 0.0 && b >= 0.0 {
        return Ok(BetaCalibrator { a, b, c });
    }

    if a < 0.0 {
        let only2: Vec<Vec<f64>> = f2.iter().map(|&x| vec![x]).collect();
        let beta = newton_logistic(&only2, labels);
        if beta[0] >= 0.0 {
            return Ok(BetaCalibrator {
                a: 0.0,
                b: beta[0],
                c: beta[1],
            });
        }
    } else {
        let only1: Vec<Vec<f64>> = f1.iter().map(|&x| vec![x]).collect();
        let beta = newton_logistic(&only1, labels);
        if beta[0] >= 0.0 {
            return Ok(BetaCalibrator {
                a: beta[0],
                b: 0.0,
                c: beta[1],
            });
        }
    }

    // Both directions offend: fall back to the constant base-rate map.
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let rate = pos / labels.len() as f64;
    let rate = rate.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    Ok(BetaCalibrator {
        a: 0.0,
        b: 0.0,
        c: (rate / (1.0 - rate)).ln(),
    })
}
