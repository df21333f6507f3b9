//! Experiment orchestration for the calibration benchmark: per-dataset
//! pipelines, result persistence, and the cross-dataset statistical report.

pub mod config;
pub mod experiment;
pub mod report;
