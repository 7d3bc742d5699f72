//! Scenario comparison, cost extrapolation and per-series optimal retrain
//! frequency.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::metrics::{Metric, MetricFrame};
use crate::models::ModelFamily;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("incomplete blocks; missing cells (block, scenario): {0:?}")]
    IncompleteBlocks(Vec<(usize, usize)>),
    #[error("need at least {needed} scenarios, have {found}")]
    TooFewScenarios { needed: usize, found: usize },
    #[error("need at least {needed} blocks, have {found}")]
    TooFewBlocks { needed: usize, found: usize },
    #[error("no baseline scenario for model {0}")]
    MissingBaseline(String),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("no data for {0}")]
    MissingData(String),
}

/// Studentized range quantiles divided by sqrt(2), infinite degrees of
/// freedom, for k = 2..=20 compared groups.
const NEMENYI_Q_05: [f64; 19] = [
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684, 3.218654, 3.268004,
    3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073, 3.543799,
];
const NEMENYI_Q_10: [f64; 19] = [
    1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889, 2.977768, 3.029694,
    3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224, 3.319233,
];

/// Nemenyi critical value `q_alpha` for `k` groups; available for
/// alpha in {0.05, 0.10} and 2 <= k <= 20.
pub fn nemenyi_q(k: usize, alpha: f64) -> Option<f64> {
    if !(2..=20).contains(&k) {
        return None;
    }
    if (alpha - 0.05).abs() < 1e-12 {
        Some(NEMENYI_Q_05[k - 2])
    } else if (alpha - 0.10).abs() < 1e-12 {
        Some(NEMENYI_Q_10[k - 2])
    } else {
        None
    }
}

/// Critical difference of mean ranks for `k` groups over `n` blocks.
pub fn critical_difference(k: usize, n: usize, alpha: f64) -> Option<f64> {
    nemenyi_q(k, alpha).map(|q| q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

/// Ranks (1 = smallest) with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over a complete block design plus Nemenyi comparisons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FriedmanTest {
    pub k: usize,
    pub n_blocks: usize,
    pub mean_ranks: Vec<f64>,
    pub chi_square: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// `None` when no tabulated critical value exists for (k, alpha).
    pub critical_difference: Option<f64>,
    /// `|mean_rank[i] - mean_rank[j]|`.
    pub rank_differences: Vec<Vec<f64>>,
    pub significant: Vec<Vec<bool>>,
}

/// Runs the test on `table[block][scenario]`; NaN cells count as missing.
pub fn friedman_table(table: &[Vec<f64>], alpha: f64) -> Result<FriedmanTest, AnalysisError> {
    let n = table.len();
    let k = table.first().map_or(0, Vec::len);
    let missing: Vec<(usize, usize)> = table
        .iter()
        .enumerate()
        .flat_map(|(b, row)| {
            (0..k.max(row.len()))
                .filter(move |&j| row.get(j).is_none_or(|v| v.is_nan()))
                .map(move |j| (b, j))
        })
        .collect();
    if !missing.is_empty() || table.iter().any(|r| r.len() != k) {
        return Err(AnalysisError::IncompleteBlocks(missing));
    }
    if k < 3 {
        return Err(AnalysisError::TooFewScenarios { needed: 3, found: k });
    }
    if n < 2 {
        return Err(AnalysisError::TooFewBlocks { needed: 2, found: n });
    }
    let mut rank_sums = vec![0.0; k];
    for row in table {
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
    }
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / n as f64).collect();
    let centre = (k + 1) as f64 / 2.0;
    let spread: f64 = mean_ranks.iter().map(|r| (r - centre).powi(2)).sum();
    let chi_square = 12.0 * n as f64 / (k * (k + 1)) as f64 * spread;
    let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    let p_value = dist.sf(chi_square).clamp(0.0, 1.0);
    let cd = critical_difference(k, n, alpha);
    let rank_differences: Vec<Vec<f64>> = mean_ranks
        .iter()
        .map(|a| mean_ranks.iter().map(|b| (a - b).abs()).collect())
        .collect();
    let significant = rank_differences
        .iter()
        .map(|row| row.iter().map(|&d| cd.is_some_and(|cd| d > cd)).collect())
        .collect();
    Ok(FriedmanTest {
        k,
        n_blocks: n,
        mean_ranks,
        chi_square,
        p_value,
        alpha,
        critical_difference: cd,
        rank_differences,
        significant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocking {
    /// One block per (model, series) pair.
    ModelSeries,
    /// One block per series, restricted to a single model.
    PerModel(ModelFamily),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FriedmanResult {
    pub metric: Metric,
    pub blocking: Blocking,
    /// Scenarios compared, in the order of `test.mean_ranks`.
    pub scenarios: Vec<usize>,
    /// Scenarios dropped because some model lacks them.
    pub excluded_scenarios: Vec<usize>,
    #[serde(flatten)]
    pub test: FriedmanTest,
}

/// Friedman-Nemenyi comparison of the retrain scenarios in `frame`.
pub fn friedman_nemenyi(
    frame: &MetricFrame,
    metric: Metric,
    alpha: f64,
    blocking: Blocking,
) -> Result<FriedmanResult, AnalysisError> {
    let models = match blocking {
        Blocking::ModelSeries => frame.models(),
        Blocking::PerModel(m) => vec![m],
    };
    if models.is_empty() {
        return Err(AnalysisError::MissingData("any model".into()));
    }
    let (scenarios, excluded): (Vec<usize>, Vec<usize>) = frame
        .retrain_set
        .iter()
        .partition(|&&r| models.iter().all(|&m| frame.summary_row(m, r).is_some()));
    if !excluded.is_empty() {
        log::warn!(
            "{} test skips scenarios {excluded:?}: missing for some model",
            metric.name()
        );
    }
    let n_series = frame.included.len();
    let mut table = vec![Vec::with_capacity(scenarios.len()); models.len() * n_series];
    for (mi, &m) in models.iter().enumerate() {
        for &r in &scenarios {
            let means = frame.series_means(m, r, metric).expect("scenario present");
            for (k, v) in means.into_iter().enumerate() {
                table[mi * n_series + k].push(v);
            }
        }
    }
    Ok(FriedmanResult {
        metric,
        blocking,
        scenarios,
        excluded_scenarios: excluded,
        test: friedman_table(&table, alpha)?,
    })
}

/// Writes `stats.json`: the pooled test per metric plus a per-model
/// breakdown. Tests that cannot run are recorded with their error.
pub fn write_stats_json(frame: &MetricFrame, alpha: f64, path: &Path) -> std::io::Result<()> {
    fn entry(r: Result<FriedmanResult, AnalysisError>) -> serde_json::Value {
        match r {
            Ok(v) => serde_json::to_value(v).expect("serialisable"),
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        }
    }
    let mut root = serde_json::Map::new();
    for metric in [Metric::Rmsse, Metric::Smql] {
        root.insert(
            metric.name().into(),
            entry(friedman_nemenyi(frame, metric, alpha, Blocking::ModelSeries)),
        );
    }
    let mut per_model = serde_json::Map::new();
    for m in frame.models() {
        let mut e = serde_json::Map::new();
        for metric in [Metric::Rmsse, Metric::Smql] {
            e.insert(
                metric.name().into(),
                entry(friedman_nemenyi(frame, metric, alpha, Blocking::PerModel(m))),
            );
        }
        per_model.insert(m.name().into(), e.into());
    }
    root.insert("per_model".into(), per_model.into());
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(root)).expect("serialisable");
    std::fs::write(path, text + "\n")
}

/// Pay-as-you-go compute pricing extrapolated to a fleet of series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub rate_per_hour: f64,
    pub n_series_dataset: usize,
    pub n_series_target: usize,
    pub currency: String,
}

impl CostModel {
    pub const DEFAULT_RATE: f64 = 3.5;
    pub const DEFAULT_TARGET: usize = 1_000_000;

    pub fn new(n_series_dataset: usize) -> Self {
        Self {
            rate_per_hour: Self::DEFAULT_RATE,
            n_series_dataset,
            n_series_target: Self::DEFAULT_TARGET,
            currency: "USD".into(),
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.rate_per_hour > 0.0 && self.rate_per_hour.is_finite()) {
            return Err(AnalysisError::InvalidCostModel("rate_per_hour must be positive".into()));
        }
        if self.n_series_dataset == 0 || self.n_series_target == 0 {
            return Err(AnalysisError::InvalidCostModel("series counts must be positive".into()));
        }
        Ok(())
    }

    /// Cost of `ct_wall_seconds` of compute, scaled to the target fleet.
    pub fn cost(&self, ct_wall_seconds: f64) -> f64 {
        ct_wall_seconds / 3600.0 * self.rate_per_hour * (self.n_series_target as f64 / self.n_series_dataset as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioCost {
    pub cost: f64,
    /// `1 - cost / baseline cost`.
    pub savings: f64,
}

pub fn cost_of_scenario(
    ct_wall_seconds: f64,
    baseline_ct_wall_seconds: Option<f64>,
    model: &CostModel,
) -> Result<ScenarioCost, AnalysisError> {
    model.validate()?;
    let base = baseline_ct_wall_seconds.ok_or_else(|| AnalysisError::MissingBaseline("scenario".into()))?;
    let cost = model.cost(ct_wall_seconds);
    let base_cost = model.cost(base);
    if base_cost <= 0.0 {
        return Err(AnalysisError::MissingBaseline(
            "baseline with zero computing time".into(),
        ));
    }
    Ok(ScenarioCost {
        cost,
        savings: 1.0 - cost / base_cost,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub model: ModelFamily,
    pub r: usize,
    pub cost: f64,
    /// `None` when the model has no baseline run.
    pub savings: Option<f64>,
}

pub fn cost_table(frame: &MetricFrame, model: &CostModel) -> Result<Vec<CostRow>, AnalysisError> {
    model.validate()?;
    let mut rows = Vec::with_capacity(frame.summary.len());
    for s in &frame.summary {
        let base = frame.summary_row(s.model, frame.baseline_r).map(|b| b.ct_wall_seconds);
        let (cost, savings) = match cost_of_scenario(s.ct_wall_seconds, base, model) {
            Ok(c) => (c.cost, Some(c.savings)),
            Err(AnalysisError::MissingBaseline(_)) => (model.cost(s.ct_wall_seconds), None),
            Err(e) => return Err(e),
        };
        rows.push(CostRow {
            model: s.model,
            r: s.r,
            cost,
            savings,
        });
    }
    Ok(rows)
}

/// `cost.csv`.
pub fn write_cost_csv(rows: &[CostRow], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "model,r,cost,savings")?;
    for r in rows {
        let savings = r.savings.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.model, r.r, r.cost, savings)?;
    }
    w.flush()
}

/// Per-series best scenario for one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalFrequency {
    pub metric: Metric,
    /// `None` averages over every model in the frame.
    pub model: Option<ModelFamily>,
    pub scenarios: Vec<usize>,
    /// `(series id, r*)` for each scored series.
    pub r_star: Vec<(String, usize)>,
    /// Count of series per scenario, in `scenarios` order.
    pub histogram: Vec<(usize, usize)>,
}

/// Argmin over scenarios of the across-origin mean metric, per series.
/// Ties go to the largest `r`.
pub fn optimal_frequency(
    frame: &MetricFrame,
    metric: Metric,
    model: Option<ModelFamily>,
) -> Result<OptimalFrequency, AnalysisError> {
    let models = model.map_or_else(|| frame.models(), |m| vec![m]);
    if models.is_empty() {
        return Err(AnalysisError::MissingData("any model".into()));
    }
    let scenarios: Vec<usize> = frame
        .retrain_set
        .iter()
        .copied()
        .filter(|&r| models.iter().all(|&m| frame.summary_row(m, r).is_some()))
        .collect();
    if scenarios.is_empty() {
        return Err(AnalysisError::MissingData("a scenario shared by all models".into()));
    }
    let n = frame.included.len();
    // averaged[scenario][series]
    let averaged: Vec<Vec<f64>> = scenarios
        .iter()
        .map(|&r| {
            let mut acc = vec![0.0; n];
            for &m in &models {
                let means = frame.series_means(m, r, metric).expect("scenario present");
                acc.iter_mut().zip(means).for_each(|(a, v)| *a += v);
            }
            acc.into_iter().map(|a| a / models.len() as f64).collect()
        })
        .collect();
    let mut counts: BTreeMap<usize, usize> = scenarios.iter().map(|&r| (r, 0)).collect();
    let r_star = (0..n)
        .map(|k| {
            let mut best = 0;
            for j in 1..scenarios.len() {
                if averaged[j][k] <= averaged[best][k] {
                    best = j;
                }
            }
            *counts.get_mut(&scenarios[best]).expect("known scenario") += 1;
            (frame.series_ids[frame.included[k]].clone(), scenarios[best])
        })
        .collect();
    Ok(OptimalFrequency {
        metric,
        model,
        histogram: scenarios.iter().map(|r| (*r, counts[r])).collect(),
        scenarios,
        r_star,
    })
}

/// `optimal.csv` from matching RMSSE and SMQL tables.
pub fn write_optimal_csv(rmsse: &OptimalFrequency, smql: &OptimalFrequency, path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "unique_id,r_star_rmsse,r_star_smql")?;
    for ((id, a), (_, b)) in rmsse.r_star.iter().zip(&smql.r_star) {
        writeln!(w, "{id},{a},{b}")?;
    }
    w.flush()
}

/// `optimal_by_model.csv`: the per-model breakdown.
pub fn write_optimal_by_model_csv(tables: &[(OptimalFrequency, OptimalFrequency)], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "model,unique_id,r_star_rmsse,r_star_smql")?;
    for (rm, sm) in tables {
        let model = rm.model.map(|m| m.name()).unwrap_or("all");
        for ((id, a), (_, b)) in rm.r_star.iter().zip(&sm.r_star) {
            writeln!(w, "{model},{id},{a},{b}")?;
        }
    }
    w.flush()
}
