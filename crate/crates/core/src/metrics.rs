//! Calibration and accuracy metrics: log-loss, Brier score, expected
//! calibration error and reliability-curve data.
//!
//! Binning is equal-width over [0, 1] with the top bin right-closed, so a
//! prediction of exactly 1.0 lands in the last bin.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty prediction set")]
    Empty,
    #[error("lengths differ: {probs} probabilities, {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
    #[error("infinite log-loss: probability {prob} with label {label} at index {index} (callers must clip)")]
    InfiniteLoss { index: usize, prob: f64, label: u8 },
    #[error("number of bins must be at least 1")]
    ZeroBins,
}

/// Predicted probabilities paired with observed binary outcomes.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    probs: Vec<f64>,
    labels: Vec<u8>,
}

impl PredictionSet {
    pub fn new(probs: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricsError> {
        if probs.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                probs: probs.len(),
                labels: labels.len(),
            });
        }
        if probs.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(&p) = probs.iter().find(|&&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
            return Err(MetricsError::OutOfRange(p));
        }
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(MetricsError::NonBinaryLabel(y));
        }
        Ok(PredictionSet { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Mean negative Bernoulli log-likelihood. Probabilities of exactly 0 or 1
/// on the losing side are an error: clipping is the caller's contract.
pub fn log_loss(p: &PredictionSet) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for (i, (&prob, &y)) in p.probs.iter().zip(p.labels.iter()).enumerate() {
        if prob == 0.0 || prob == 1.0 {
            return Err(MetricsError::InfiniteLoss {
                index: i,
                prob,
                label: y,
            });
        }
        total -= if y == 1 { prob.ln() } else { (1.0 - prob).ln() };
    }
    Ok(total / p.len() as f64)
}

/// Mean squared error of the probabilistic forecast,
/// `(1/N) sum (f_i - o_i)^2`.
pub fn brier_score(p: &PredictionSet) -> f64 {
    let sum: f64 = p
        .probs
        .iter()
        .zip(p.labels.iter())
        .map(|(&prob, &y)| {
            let d = prob - f64::from(y);
            d * d
        })
        .sum();
    sum / p.len() as f64
}

#[inline]
fn bin_index(prob: f64, n_bins: usize) -> usize {
    ((prob * n_bins as f64) as usize).min(n_bins - 1)
}

/// Expected calibration error over `n_bins` equal-width bins:
/// `sum_b (n_b / N) |acc_b - conf_b|`, empty bins contributing zero.
pub fn ece(p: &PredictionSet, n_bins: usize) -> Result<f64, MetricsError> {
    if n_bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut conf = vec![0.0; n_bins];
    let mut acc = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&prob, &y) in p.probs.iter().zip(p.labels.iter()) {
        let b = bin_index(prob, n_bins);
        conf[b] += prob;
        acc[b] += f64::from(y);
        count[b] += 1;
    }
    let n = p.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let c = count[b] as f64;
        total += (c / n) * ((acc[b] / c) - (conf[b] / c)).abs();
    }
    Ok(total)
}

/// One reliability-curve bin; `mean_pred`/`frac_pos` are absent for empty bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub mean_pred: Option<f64>,
    pub frac_pos: Option<f64>,
    pub count: usize,
}

/// Plot-ready reliability data: one record per bin, counts summing to N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub bins: Vec<ReliabilityBin>,
    pub n_bins: usize,
}

impl ReliabilityCurve {
    /// CSV with columns `bin_low,bin_high,mean_pred,frac_pos,count`;
    /// empty bins leave the mean columns blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_low,bin_high,mean_pred,frac_pos,count")?;
        for b in &self.bins {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                b.bin_low,
                b.bin_high,
                fmt(b.mean_pred),
                fmt(b.frac_pos),
                b.count
            )?;
        }
        Ok(())
    }
}

/// Per-bin mean predicted probability and empirical positive frequency,
/// with the same binning as [`ece`].
pub fn reliability_curve(p: &PredictionSet, n_bins: usize) -> Result<ReliabilityCurve, MetricsError> {
    if n_bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut conf = vec![0.0; n_bins];
    let mut acc = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&prob, &y) in p.probs.iter().zip(p.labels.iter()) {
        let b = bin_index(prob, n_bins);
        conf[b] += prob;
        acc[b] += f64::from(y);
        count[b] += 1;
    }
    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b];
            ReliabilityBin {
                bin_low: b as f64 / n_bins as f64,
                bin_high: (b + 1) as f64 / n_bins as f64,
                mean_pred: (c > 0).then(|| conf[b] / c as f64),
                frac_pos: (c > 0).then(|| acc[b] / c as f64),
                count: c,
            }
        })
        .collect();
    Ok(ReliabilityCurve { bins, n_bins })
}
