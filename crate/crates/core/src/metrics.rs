//! Scaled accuracy metrics and their aggregation across a backtest grid.
//!
//! Both metrics scale by the in-sample error of the seasonal-naive forecast
//! over the training window: RMSSE by its mean squared error, the scaled
//! quantile loss (SQL) by its mean absolute error. SMQL is the unweighted mean
//! of SQL over the quantile levels.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::backtest::BacktestRun;
use crate::models::{ModelFamily, QuantileLevels};
use crate::panel::TimeSeriesPanel;
use crate::stats::pinball;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("in-sample seasonal-naive error is zero; the series cannot be scaled")]
    ZeroDenominator,
    #[error("training window of {n} observations is too short for season {s}")]
    HistoryTooShort { n: usize, s: usize },
    #[error("{actuals} actuals but {forecasts} forecasts")]
    LengthMismatch { actuals: usize, forecasts: usize },
    #[error("no forecast for quantile level {0}")]
    MissingQuantile(f64),
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("runs cannot be aggregated together: {0}")]
    IncompatibleRuns(String),
}

fn check(actuals: &[f64], forecasts: &[f64], train: &[f64], s: usize) -> Result<(), MetricError> {
    if actuals.len() != forecasts.len() || actuals.is_empty() {
        return Err(MetricError::LengthMismatch {
            actuals: actuals.len(),
            forecasts: forecasts.len(),
        });
    }
    if s == 0 || train.len() <= s {
        return Err(MetricError::HistoryTooShort { n: train.len(), s });
    }
    Ok(())
}

/// Mean squared in-sample seasonal-naive error.
pub fn naive_mse(train: &[f64], s: usize) -> Result<f64, MetricError> {
    if s == 0 || train.len() <= s {
        return Err(MetricError::HistoryTooShort { n: train.len(), s });
    }
    let sum: f64 = (s..train.len()).map(|t| (train[t] - train[t - s]).powi(2)).sum();
    Ok(sum / (train.len() - s) as f64)
}

/// Mean absolute in-sample seasonal-naive error.
pub fn naive_mae(train: &[f64], s: usize) -> Result<f64, MetricError> {
    if s == 0 || train.len() <= s {
        return Err(MetricError::HistoryTooShort { n: train.len(), s });
    }
    let sum: f64 = (s..train.len()).map(|t| (train[t] - train[t - s]).abs()).sum();
    Ok(sum / (train.len() - s) as f64)
}

fn rmsse_scaled(actuals: &[f64], forecasts: &[f64], denom: f64) -> Result<f64, MetricError> {
    if denom <= 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    let mse = actuals.iter().zip(forecasts).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / actuals.len() as f64;
    Ok((mse / denom).sqrt())
}

fn sql_scaled(actuals: &[f64], forecasts: &[f64], q: f64, denom: f64) -> Result<f64, MetricError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricError::InvalidQuantile(q));
    }
    if denom <= 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    let loss = actuals
        .iter()
        .zip(forecasts)
        .map(|(&y, &f)| pinball(y, f, q))
        .sum::<f64>()
        / actuals.len() as f64;
    Ok(loss / denom)
}

/// Root mean squared scaled error of `forecasts` against `actuals`.
pub fn rmsse(actuals: &[f64], forecasts: &[f64], train: &[f64], s: usize) -> Result<f64, MetricError> {
    check(actuals, forecasts, train, s)?;
    rmsse_scaled(actuals, forecasts, naive_mse(train, s)?)
}

/// Scaled pinball loss of the level-`q` forecasts.
pub fn sql(actuals: &[f64], forecasts: &[f64], q: f64, train: &[f64], s: usize) -> Result<f64, MetricError> {
    check(actuals, forecasts, train, s)?;
    sql_scaled(actuals, forecasts, q, naive_mae(train, s)?)
}

/// Mean SQL over `levels`; `forecasts` pairs each level with its path.
pub fn smql(
    actuals: &[f64],
    forecasts: &[(f64, &[f64])],
    levels: &[f64],
    train: &[f64],
    s: usize,
) -> Result<f64, MetricError> {
    if levels.is_empty() {
        return Err(MetricError::IncompatibleRuns("empty quantile level set".into()));
    }
    let mut total = 0.0;
    for &q in levels {
        let path = forecasts
            .iter()
            .find(|(l, _)| *l == q)
            .map(|(_, p)| *p)
            .ok_or(MetricError::MissingQuantile(q))?;
        total += sql(actuals, path, q, train, s)?;
    }
    Ok(total / levels.len() as f64)
}

/// Options for [`aggregate`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AggregateOptions {
    /// Scale every origin by the first origin's training window instead of
    /// the expanding window up to each origin.
    pub scale_once: bool,
}

/// Metrics of one forecast path.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub model: ModelFamily,
    pub r: usize,
    pub series: usize,
    pub origin: usize,
    pub rmsse: f64,
    pub smql: f64,
    pub sql: Vec<f64>,
}

/// Aggregates of one (model, r) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: ModelFamily,
    pub r: usize,
    pub mean_rmsse: f64,
    pub mean_smql: f64,
    pub ct_wall_seconds: f64,
    pub ct_cpu_seconds: f64,
    /// `None` when the model's baseline run is missing.
    pub rel_rmsse: Option<f64>,
    pub rel_smql: Option<f64>,
    pub rel_ct: Option<f64>,
    pub n_series: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmsse,
    Smql,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmsse => "rmsse",
            Metric::Smql => "smql",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    pub series_ids: Vec<String>,
    /// Panel indices of the scored series.
    pub included: Vec<usize>,
    pub excluded_series: Vec<String>,
    pub quantile_levels: QuantileLevels,
    pub retrain_set: Vec<usize>,
    pub baseline_r: usize,
    pub origins: Vec<usize>,
    /// Ordered like the runs, then origin, then series.
    pub detail: Vec<DetailRow>,
    pub summary: Vec<SummaryRow>,
}

impl MetricFrame {
    pub fn models(&self) -> Vec<ModelFamily> {
        let mut out: Vec<ModelFamily> = Vec::new();
        for row in &self.summary {
            if !out.contains(&row.model) {
                out.push(row.model);
            }
        }
        out
    }

    pub fn summary_row(&self, model: ModelFamily, r: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.model == model && s.r == r)
    }

    /// Scenarios present for `model`, in retrain-set order.
    pub fn scenarios(&self, model: ModelFamily) -> Vec<usize> {
        self.retrain_set
            .iter()
            .copied()
            .filter(|&r| self.summary_row(model, r).is_some())
            .collect()
    }

    /// Across-origin mean of `metric` per included series, for one cell.
    pub fn series_means(&self, model: ModelFamily, r: usize, metric: Metric) -> Option<Vec<f64>> {
        self.summary_row(model, r)?;
        let pos: std::collections::HashMap<usize, usize> =
            self.included.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut sums = vec![0.0; self.included.len()];
        let mut counts = vec![0usize; self.included.len()];
        for row in self.detail.iter().filter(|d| d.model == model && d.r == r) {
            let k = pos[&row.series];
            sums[k] += match metric {
                Metric::Rmsse => row.rmsse,
                Metric::Smql => row.smql,
            };
            counts[k] += 1;
        }
        Some(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
    }

    /// `metrics.csv`.
    pub fn write_summary_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "model,r,mean_rmsse,mean_smql,ct_wall_s,rel_rmsse,rel_smql,rel_ct,n_series,n_excluded"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.summary {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                s.model,
                s.r,
                s.mean_rmsse,
                s.mean_smql,
                s.ct_wall_seconds,
                opt(s.rel_rmsse),
                opt(s.rel_smql),
                opt(s.rel_ct),
                s.n_series,
                s.n_excluded
            )?;
        }
        w.flush()
    }

    /// `metrics_detail.csv`: one line per (model, r, series, origin).
    pub fn write_detail_csv(&self, panel: &TimeSeriesPanel, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "model,r,unique_id,origin_ds,rmsse,smql")?;
        for &q in self.quantile_levels.as_slice() {
            write!(w, ",sql_{}", QuantileLevels::column_name(q))?;
        }
        writeln!(w)?;
        for d in &self.detail {
            write!(
                w,
                "{},{},{},{},{},{}",
                d.model,
                d.r,
                self.series_ids[d.series],
                panel.dates()[d.origin - 1].format("%Y-%m-%d"),
                d.rmsse,
                d.smql
            )?;
            for v in &d.sql {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Scores every run against the panel and normalises by each model's
/// baseline scenario. Series whose scaling denominator vanishes at any
/// origin are excluded from every run.
pub fn aggregate(
    runs: &[&BacktestRun],
    panel: &TimeSeriesPanel,
    options: AggregateOptions,
) -> Result<MetricFrame, MetricError> {
    let first = runs
        .first()
        .ok_or_else(|| MetricError::IncompatibleRuns("no runs to aggregate".into()))?;
    for run in runs {
        if run.config != first.config || run.origins != first.origins || run.quantile_levels != first.quantile_levels {
            return Err(MetricError::IncompatibleRuns(format!(
                "{} r={} differs in config, origins or quantile levels",
                run.family, run.r
            )));
        }
        if run.n_series() != panel.n_series() {
            return Err(MetricError::IncompatibleRuns(format!(
                "{} r={} covers {} series, panel has {}",
                run.family,
                run.r,
                run.n_series(),
                panel.n_series()
            )));
        }
    }
    let config = &first.config;
    let s = config.season;
    let h = config.horizon;
    let origins = &first.origins;
    let levels = first.quantile_levels.as_slice();

    // Denominators per (series, origin ordinal).
    let train_end = |o: usize| if options.scale_once { origins[0] } else { o };
    let mut included = Vec::new();
    let mut excluded_series = Vec::new();
    let mut denoms: Vec<Vec<(f64, f64)>> = Vec::new();
    for i in 0..panel.n_series() {
        let y = panel.values(i);
        let mut row = Vec::with_capacity(origins.len());
        let mut ok = true;
        for &o in origins {
            let train = &y[..train_end(o)];
            let pair = (naive_mse(train, s)?, naive_mae(train, s)?);
            if pair.0 <= 0.0 || pair.1 <= 0.0 {
                ok = false;
                break;
            }
            row.push(pair);
        }
        if ok {
            included.push(i);
            denoms.push(row);
        } else {
            excluded_series.push(panel.series_ids()[i].clone());
        }
    }

    let details: Vec<Vec<DetailRow>> = runs
        .par_iter()
        .map(|run| {
            let mut rows = Vec::with_capacity(origins.len() * included.len());
            let mut path_q: Vec<Vec<f64>> = vec![Vec::with_capacity(h); levels.len()];
            let mut points = Vec::with_capacity(h);
            for (oi, &o) in origins.iter().enumerate() {
                for (k, &i) in included.iter().enumerate() {
                    let recs = run.path(oi, i);
                    let actuals = &panel.values(i)[o..o + h];
                    points.clear();
                    points.extend(recs.iter().map(|r| r.point));
                    path_q.iter_mut().for_each(Vec::clear);
                    for rec in recs {
                        for (qi, v) in rec.quantiles.iter().enumerate() {
                            path_q[qi].push(*v);
                        }
                    }
                    let (mse, mae) = denoms[k][oi];
                    let rm = rmsse_scaled(actuals, &points, mse)?;
                    let sqls = levels
                        .iter()
                        .zip(&path_q)
                        .map(|(&q, p)| sql_scaled(actuals, p, q, mae))
                        .collect::<Result<Vec<f64>, _>>()?;
                    rows.push(DetailRow {
                        model: run.family,
                        r: run.r,
                        series: i,
                        origin: o,
                        rmsse: rm,
                        smql: mean(sqls.iter().copied()),
                        sql: sqls,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, MetricError>>()?;

    let n_inc = included.len();
    let n_orig = origins.len();
    let mut summary = Vec::with_capacity(runs.len());
    for (run, rows) in runs.iter().zip(&details) {
        // Mean over origins per series, then over series.
        let per_series = |f: fn(&DetailRow) -> f64| -> f64 {
            if n_inc == 0 {
                return f64::NAN;
            }
            mean((0..n_inc).map(|k| mean((0..n_orig).map(|oi| f(&rows[oi * n_inc + k])))))
        };
        summary.push(SummaryRow {
            model: run.family,
            r: run.r,
            mean_rmsse: per_series(|d| d.rmsse),
            mean_smql: per_series(|d| d.smql),
            ct_wall_seconds: run.ct_wall_seconds(),
            ct_cpu_seconds: run.fit_events.iter().map(|e| e.cpu_seconds).sum::<f64>() + run.predict_cpu_seconds_total,
            rel_rmsse: None,
            rel_smql: None,
            rel_ct: None,
            n_series: n_inc,
            n_excluded: excluded_series.len(),
        });
    }
    let baseline = config.baseline_r;
    let base_rows: Vec<SummaryRow> = summary.iter().filter(|s| s.r == baseline).cloned().collect();
    for row in &mut summary {
        if let Some(b) = base_rows.iter().find(|b| b.model == row.model) {
            if row.r == baseline {
                row.rel_rmsse = Some(1.0);
                row.rel_smql = Some(1.0);
                row.rel_ct = Some(1.0);
            } else {
                row.rel_rmsse = Some(row.mean_rmsse / b.mean_rmsse);
                row.rel_smql = Some(row.mean_smql / b.mean_smql);
                row.rel_ct = Some(row.ct_wall_seconds / b.ct_wall_seconds);
            }
        }
    }
    if !excluded_series.is_empty() {
        log::warn!(
            "{} series excluded: zero in-sample seasonal-naive error",
            excluded_series.len()
        );
    }
    Ok(MetricFrame {
        series_ids: panel.series_ids().to_vec(),
        included,
        excluded_series,
        quantile_levels: first.quantile_levels.clone(),
        retrain_set: config.retrain_set.clone(),
        baseline_r: baseline,
        origins: origins.clone(),
        detail: details.into_iter().flatten().collect(),
        summary,
    })
}
