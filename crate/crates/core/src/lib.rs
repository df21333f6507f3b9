//! Bayesian neural network classification via Gaussian variational inference,
//! post-hoc probability calibration, and rank-based benchmark statistics.
//!
//! The crate is organised around the benchmark pipeline:
//!
//! - [`nn`]: feedforward binary classifier, its likelihood and exact gradients;
//! - [`vi`]: factor-covariance Gaussian variational inference with
//!   reparametrized gradients and ADAM ascent;
//! - [`calibration`]: logistic (Platt), isotonic and beta calibrators;
//! - [`metrics`]: log-loss, Brier score, expected calibration error and
//!   reliability-curve data;
//! - [`stats`]: average ranks, Friedman test, Wilcoxon signed-rank with Holm
//!   correction and critical-difference summaries;
//! - [`data`]: dataset loading, binarization, stratified splitting,
//!   standardization and the synthetic toy generator;
//! - [`rng`]: the seedable, splittable generator every stochastic stage
//!   draws from.

pub mod calibration;
pub mod data;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod vi;
