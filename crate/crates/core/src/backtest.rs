//! Expanding-window rolling-origin evaluation with retrain scheduling.
//!
//! An origin `o` is the exclusive end of the training window: the model may
//! read panel indices `< o` and forecasts indices `o..o + h`. Origins run
//! from `n - T` to `n - h` in steps of `p`. Scenario `r` refits at origin
//! ordinals `0, r, 2r, ...` and reuses the latest fit in between, so the first
//! origin always fits and `r = T` fits exactly once.
//!
//! Fit and predict sections are timed under a process-wide gate so that
//! concurrent grid cells never overlap their measurements.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureBuilder, FeatureConfig, FeatureError};
use crate::models::{self, GlobalModel, ModelError, ModelFamily, ModelParams, ModelSpec, Prediction, QuantileLevels};
use crate::panel::{Frequency, TimeSeriesPanel};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
    #[error("insufficient history: need {needed} observations, panel has {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("scenario r={0} is not in the retrain set")]
    UnknownScenario(usize),
    #[error("backtesting requires an aligned panel; filter by minimum length first")]
    RaggedPanel,
    #[error("feature error at origin {origin}: {source}")]
    Feature {
        origin: usize,
        #[source]
        source: FeatureError,
    },
    #[error("model error at origin {origin}: {source}")]
    Model {
        origin: usize,
        #[source]
        source: ModelError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    #[default]
    Expanding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub horizon: usize,
    pub test_size: usize,
    pub step_size: usize,
    pub retrain_set: Vec<usize>,
    pub baseline_r: usize,
    pub frequency: Frequency,
    /// Seasonal period used by metric scaling and the naive benchmark.
    pub season: usize,
    pub window_mode: WindowMode,
}

impl BacktestConfig {
    /// Daily: h=28, T=364, baseline r=7. Weekly: h=13, T=52, baseline r=1.
    pub fn for_frequency(frequency: Frequency) -> Self {
        match frequency {
            Frequency::Daily => Self {
                horizon: 28,
                test_size: 364,
                step_size: 1,
                retrain_set: vec![7, 14, 21, 30, 60, 90, 120, 150, 180, 364],
                baseline_r: 7,
                frequency,
                season: 7,
                window_mode: WindowMode::Expanding,
            },
            Frequency::Weekly => Self {
                horizon: 13,
                test_size: 52,
                step_size: 1,
                retrain_set: vec![1, 2, 3, 4, 6, 8, 10, 13, 26, 52],
                baseline_r: 1,
                frequency,
                season: 1,
                window_mode: WindowMode::Expanding,
            },
        }
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.step_size == 0 {
            return bad("step_size must be positive".into());
        }
        if self.horizon > self.test_size {
            return bad(format!("horizon {} exceeds test_size {}", self.horizon, self.test_size));
        }
        if self.season == 0 {
            return bad("season must be positive".into());
        }
        if self.retrain_set.is_empty() {
            return bad("retrain_set is empty".into());
        }
        if self.retrain_set.windows(2).any(|w| w[0] >= w[1]) {
            return bad("retrain_set must be strictly increasing".into());
        }
        if let Some(r) = self.retrain_set.iter().find(|&&r| r == 0 || r > self.test_size) {
            return bad(format!("retrain scenario {r} outside 1..={}", self.test_size));
        }
        if !self.retrain_set.contains(&self.baseline_r) {
            return bad(format!("baseline_r {} is not in retrain_set", self.baseline_r));
        }
        Ok(())
    }

    pub fn n_origins(&self) -> usize {
        (self.test_size - self.horizon) / self.step_size + 1
    }

    /// Number of fits scenario `r` performs over the configured origins.
    pub fn fits_for(&self, r: usize) -> usize {
        self.n_origins().div_ceil(r)
    }
}

/// Origins `n_total - T, n_total - T + p, ..., n_total - h`.
pub fn enumerate_origins(
    config: &BacktestConfig,
    n_total: usize,
    min_train: usize,
) -> Result<Vec<usize>, BacktestError> {
    config.validate()?;
    let needed = config.test_size + min_train.max(1);
    if n_total < needed {
        return Err(BacktestError::InsufficientHistory {
            needed,
            available: n_total,
        });
    }
    let first = n_total - config.test_size;
    Ok((0..config.n_origins()).map(|i| first + i * config.step_size).collect())
}

/// Whether the origin with ordinal `i` (0 = first origin) triggers a refit.
pub fn is_retrain_origin(i: usize, r: usize) -> bool {
    i.is_multiple_of(r)
}

static TIMING_GATE: Mutex<()> = Mutex::new(());

fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

/// Runs `f` under the timing gate and returns `(value, wall_s, cpu_s)`.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64, f64) {
    let _guard = TIMING_GATE.lock().unwrap_or_else(|e| e.into_inner());
    let cpu0 = thread_cpu_seconds();
    let t0 = Instant::now();
    let value = f();
    let wall = t0.elapsed().as_secs_f64();
    let cpu = thread_cpu_seconds() - cpu0;
    (value, wall, cpu.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitEvent {
    pub origin: usize,
    pub wall_seconds: f64,
    pub cpu_seconds: f64,
    pub train_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub series: usize,
    pub origin: usize,
    pub step: usize,
    pub point: f64,
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BacktestRun {
    pub family: ModelFamily,
    pub r: usize,
    pub origins: Vec<usize>,
    /// Ordered by origin, then series, then step.
    pub forecasts: Vec<ForecastRecord>,
    pub fit_events: Vec<FitEvent>,
    /// `fitted_at` of the model that produced each origin's forecasts.
    pub origin_fitted_at: Vec<usize>,
    pub predict_seconds_total: f64,
    pub predict_cpu_seconds_total: f64,
    pub config: BacktestConfig,
    pub quantile_levels: QuantileLevels,
    pub rng_seed: Option<u64>,
}

impl BacktestRun {
    pub fn n_series(&self) -> usize {
        match self.origins.len() {
            0 => 0,
            n => self.forecasts.len() / (n * self.config.horizon),
        }
    }

    pub fn fit_wall_seconds(&self) -> f64 {
        self.fit_events.iter().map(|e| e.wall_seconds).sum()
    }

    /// Computing time: all fit wall time plus all predict wall time.
    pub fn ct_wall_seconds(&self) -> f64 {
        self.fit_wall_seconds() + self.predict_seconds_total
    }

    /// Forecast path of one series at one origin ordinal.
    pub fn path(&self, origin_ordinal: usize, series: usize) -> &[ForecastRecord] {
        let h = self.config.horizon;
        let start = (origin_ordinal * self.n_series() + series) * h;
        &self.forecasts[start..start + h]
    }
}

/// Smallest training window the family can be fitted on.
pub fn min_train_length(family: ModelFamily, features: &FeatureConfig, config: &BacktestConfig) -> usize {
    if family.uses_features() {
        features.warm_up() + 1
    } else {
        config.season
    }
}

fn fit_at(
    family: ModelFamily,
    builder: Option<&FeatureBuilder>,
    panel: &TimeSeriesPanel,
    spec: &ModelSpec,
    quantiles: &QuantileLevels,
    config: &BacktestConfig,
    origin: usize,
) -> Result<(GlobalModel, FitEvent), BacktestError> {
    match builder {
        Some(b) => {
            let matrix = b
                .training_matrix(origin)
                .map_err(|source| BacktestError::Feature { origin, source })?;
            let (model, wall, cpu) = timed(|| models::fit_features(family, spec, &matrix, quantiles, origin));
            let model = model.map_err(|source| BacktestError::Model { origin, source })?;
            let event = FitEvent {
                origin,
                wall_seconds: wall,
                cpu_seconds: cpu,
                train_rows: matrix.n_rows(),
            };
            Ok((model, event))
        }
        None => {
            let (model, wall, cpu) = timed(|| models::fit_seasonal_naive(panel, origin, config.season, quantiles));
            let model = model.map_err(|source| BacktestError::Model { origin, source })?;
            let event = FitEvent {
                origin,
                wall_seconds: wall,
                cpu_seconds: cpu,
                train_rows: (0..panel.n_series()).map(|i| origin - panel.offset(i)).sum(),
            };
            Ok((model, event))
        }
    }
}

/// `h`-step forecasts of every series from `origin`, in (series, step) order.
fn forecast_origin(
    model: &GlobalModel,
    builder: Option<&FeatureBuilder>,
    panel: &TimeSeriesPanel,
    origin: usize,
    h: usize,
) -> Result<Vec<ForecastRecord>, BacktestError> {
    let n_series = panel.n_series();
    let model_err = |source| BacktestError::Model { origin, source };
    let mut out = Vec::with_capacity(n_series * h);
    match (&model.params, builder) {
        (ModelParams::SeasonalNaive(naive), _) => {
            for s in 0..n_series {
                let path = naive.forecast(panel, s, origin, h).map_err(model_err)?;
                for (k, (point, qs)) in path.into_iter().enumerate() {
                    let p = Prediction::finalize(point, qs, model.target_transform);
                    out.push(ForecastRecord {
                        series: s,
                        origin,
                        step: k + 1,
                        point: p.point,
                        quantiles: p.quantiles,
                    });
                }
            }
        }
        (_, Some(b)) => {
            let d = b.columns().len();
            let mut suffixes: Vec<Vec<f64>> = vec![Vec::with_capacity(h); n_series];
            let mut steps: Vec<Vec<Prediction>> = Vec::with_capacity(h);
            let mut rows = Vec::with_capacity(n_series * d);
            for k in 0..h {
                rows.clear();
                for (s, suffix) in suffixes.iter().enumerate() {
                    b.prediction_row(s, origin, origin + k, suffix, &mut rows)
                        .map_err(|source| BacktestError::Feature { origin, source })?;
                }
                let preds = model.predict(b.columns(), &rows).map_err(model_err)?;
                for (suffix, p) in suffixes.iter_mut().zip(&preds) {
                    suffix.push(p.point);
                }
                steps.push(preds);
            }
            for s in 0..n_series {
                for (k, preds) in steps.iter().enumerate() {
                    let p = &preds[s];
                    out.push(ForecastRecord {
                        series: s,
                        origin,
                        step: k + 1,
                        point: p.point,
                        quantiles: p.quantiles.clone(),
                    });
                }
            }
        }
        (_, None) => return Err(model_err(ModelError::NotRowBased(model.family))),
    }
    Ok(out)
}

/// Everything a backtest needs besides the panel and the scenario.
#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub features: &'a FeatureConfig,
    pub models: &'a ModelSpec,
    pub quantiles: &'a QuantileLevels,
    pub config: &'a BacktestConfig,
}

/// One (family, r) backtest over all origins.
pub fn run_backtest(
    panel: &TimeSeriesPanel,
    family: ModelFamily,
    inputs: RunInputs,
    r: usize,
) -> Result<BacktestRun, BacktestError> {
    let config = inputs.config;
    config.validate()?;
    if !config.retrain_set.contains(&r) {
        return Err(BacktestError::UnknownScenario(r));
    }
    if !panel.is_aligned() {
        return Err(BacktestError::RaggedPanel);
    }
    let min_train = min_train_length(family, inputs.features, config);
    let origins = enumerate_origins(config, panel.len(), min_train)?;
    let builder = if family.uses_features() {
        let b = FeatureBuilder::new(panel, inputs.features).map_err(|source| BacktestError::Feature {
            origin: origins[0],
            source,
        })?;
        Some(b)
    } else {
        None
    };

    let h = config.horizon;
    let mut forecasts = Vec::with_capacity(origins.len() * panel.n_series() * h);
    let mut fit_events = Vec::with_capacity(config.fits_for(r));
    let mut origin_fitted_at = Vec::with_capacity(origins.len());
    let mut predict_wall = 0.0;
    let mut predict_cpu = 0.0;
    let mut current: Option<GlobalModel> = None;
    for (i, &origin) in origins.iter().enumerate() {
        if is_retrain_origin(i, r) {
            let (model, event) = fit_at(
                family,
                builder.as_ref(),
                panel,
                inputs.models,
                inputs.quantiles,
                config,
                origin,
            )?;
            log::debug!(
                "{family} r={r}: fit at origin {origin} ({} rows, {:.4}s)",
                event.train_rows,
                event.wall_seconds
            );
            fit_events.push(event);
            current = Some(model);
        }
        let model = current.as_ref().expect("first origin always fits");
        let (records, wall, cpu) = timed(|| forecast_origin(model, builder.as_ref(), panel, origin, h));
        forecasts.extend(records?);
        predict_wall += wall;
        predict_cpu += cpu;
        origin_fitted_at.push(model.fitted_at);
    }
    Ok(BacktestRun {
        family,
        r,
        origins,
        forecasts,
        fit_events,
        origin_fitted_at,
        predict_seconds_total: predict_wall,
        predict_cpu_seconds_total: predict_cpu,
        config: config.clone(),
        quantile_levels: inputs.quantiles.clone(),
        rng_seed: (family == ModelFamily::Mlp).then_some(inputs.models.mlp.rng_seed),
    })
}

/// Outcome of one grid cell.
#[derive(Debug)]
pub struct GridCell {
    pub family: ModelFamily,
    pub r: usize,
    pub outcome: Result<BacktestRun, String>,
}

/// Runs every (family, r) cell, in family-major order, on `jobs` threads.
/// A failing cell is recorded and does not stop the others.
pub fn run_grid(
    panel: &TimeSeriesPanel,
    families: &[ModelFamily],
    inputs: RunInputs,
    jobs: usize,
) -> Result<Vec<GridCell>, BacktestError> {
    inputs.config.validate()?;
    if families.is_empty() {
        return Err(BacktestError::InvalidConfig("no model families selected".into()));
    }
    let cells: Vec<(ModelFamily, usize)> = families
        .iter()
        .flat_map(|&f| inputs.config.retrain_set.iter().map(move |&r| (f, r)))
        .collect();
    let run_cell = |&(family, r): &(ModelFamily, usize)| {
        log::info!("running {family} r={r}");
        let outcome = run_backtest(panel, family, inputs, r).map_err(|e| {
            log::warn!("{family} r={r} failed: {e}");
            e.to_string()
        });
        GridCell { family, r, outcome }
    };
    if jobs <= 1 {
        return Ok(cells.iter().map(run_cell).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BacktestError::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(run_cell).collect()))
}

fn fmt_date(panel: &TimeSeriesPanel, index: usize) -> String {
    panel.dates()[index].format("%Y-%m-%d").to_string()
}

/// Writes `forecasts.csv` for `runs` in the given order.
pub fn write_forecasts_csv(runs: &[&BacktestRun], panel: &TimeSeriesPanel, path: &Path) -> Result<(), BacktestError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let levels = runs.first().map(|r| r.quantile_levels.clone()).unwrap_or_default();
    write!(w, "model,r,unique_id,origin_ds,target_ds,step,point")?;
    for &q in levels.as_slice() {
        write!(w, ",{}", QuantileLevels::column_name(q))?;
    }
    writeln!(w)?;
    for run in runs {
        for rec in &run.forecasts {
            write!(
                w,
                "{},{},{},{},{},{},{}",
                run.family,
                run.r,
                panel.series_ids()[rec.series],
                fmt_date(panel, rec.origin - 1),
                fmt_date(panel, rec.origin - 1 + rec.step),
                rec.step,
                rec.point
            )?;
            for q in &rec.quantiles {
                write!(w, ",{q}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `fits.csv`: one line per fit event.
pub fn write_fits_csv(runs: &[&BacktestRun], panel: &TimeSeriesPanel, path: &Path) -> Result<(), BacktestError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "model,r,origin_ds,wall_s,cpu_s,train_rows")?;
    for run in runs {
        for e in &run.fit_events {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                run.family,
                run.r,
                fmt_date(panel, e.origin - 1),
                e.wall_seconds,
                e.cpu_seconds,
                e.train_rows
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
