//! Backtesting engine for measuring how the retraining frequency of global
//! (cross-learned) forecasting models trades accuracy against computing time.
//!
//! The crate is organised bottom-up:
//!
//! * [`panel`] - aligned demand panels, CSV ingestion and a synthetic generator.
//! * [`features`] - causal feature engineering into a pooled design matrix.
//! * [`models`] - pooled ridge regression, histogram gradient boosting, a
//!   multi-quantile MLP and the seasonal-naive benchmark.
//! * [`backtest`] - expanding-window rolling-origin evaluation with retrain
//!   scheduling and computing-time accounting.
//! * [`metrics`] - RMSSE, scaled pinball loss and their aggregation.
//! * [`analysis`] - Friedman/Nemenyi tests, cost extrapolation and
//!   per-series optimal retrain frequency.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod backtest;
pub mod features;
pub mod metrics;
pub mod models;
pub mod panel;
pub mod stats;

pub use backtest::{BacktestConfig, BacktestRun, ForecastRecord};
pub use features::{FeatureConfig, FeatureMatrix};
pub use metrics::MetricFrame;
pub use models::{GlobalModel, ModelFamily, QuantileLevels};
pub use panel::{Frequency, SyntheticSpec, TimeSeriesPanel};
