//! Seasonal-naive benchmark.

use super::ModelError;
use crate::panel::TimeSeriesPanel;
use crate::stats::empirical_quantile;

/// `h` forecasts from the training window `[.., origin)` of `series`:
/// step `k` repeats the value observed `s - ((k - 1) mod s)` periods before
/// the origin.
pub fn seasonal_naive(
    panel: &TimeSeriesPanel,
    series: usize,
    origin: usize,
    h: usize,
    s: usize,
) -> Result<Vec<f64>, ModelError> {
    let history = history(panel, series, origin);
    forecast_from_history(history, h, s)
}

fn history(panel: &TimeSeriesPanel, series: usize, origin: usize) -> &[f64] {
    let offset = panel.offset(series);
    let observed = origin.saturating_sub(offset).min(panel.values(series).len());
    &panel.values(series)[..observed]
}

pub fn forecast_from_history(history: &[f64], h: usize, s: usize) -> Result<Vec<f64>, ModelError> {
    if s == 0 {
        return Err(ModelError::InvalidParams("seasonal period must be positive".into()));
    }
    let n = history.len();
    if n < s {
        return Err(ModelError::HistoryTooShort {
            needed: s,
            available: n,
        });
    }
    Ok((1..=h).map(|k| history[n - s + (k - 1) % s]).collect())
}

/// Fitted seasonal-naive "model": per-series empirical quantiles of the
/// in-sample seasonal differences, added to the point forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveModel {
    pub season: usize,
    /// `n_series x n_quantiles` offsets.
    pub residual_quantiles: Vec<Vec<f64>>,
}

pub fn fit(panel: &TimeSeriesPanel, origin: usize, season: usize, quantiles: &[f64]) -> Result<NaiveModel, ModelError> {
    if season == 0 {
        return Err(ModelError::InvalidParams("seasonal period must be positive".into()));
    }
    let residual_quantiles = (0..panel.n_series())
        .map(|i| {
            let y = history(panel, i, origin);
            let mut diffs: Vec<f64> = (season..y.len()).map(|t| y[t] - y[t - season]).collect();
            if diffs.is_empty() {
                return vec![0.0; quantiles.len()];
            }
            quantiles.iter().map(|&q| empirical_quantile(&mut diffs, q)).collect()
        })
        .collect();
    Ok(NaiveModel {
        season,
        residual_quantiles,
    })
}

impl NaiveModel {
    /// Raw `(point, quantiles)` path for one series, before clipping.
    pub fn forecast(
        &self,
        panel: &TimeSeriesPanel,
        series: usize,
        origin: usize,
        h: usize,
    ) -> Result<Vec<(f64, Vec<f64>)>, ModelError> {
        let points = seasonal_naive(panel, series, origin, h, self.season)?;
        let offsets = &self.residual_quantiles[series];
        Ok(points
            .into_iter()
            .map(|p| (p, offsets.iter().map(|o| p + o).collect()))
            .collect())
    }
}
