//! `run`: executes the configured grid and writes the artifact directory.
//!
//! A `manifest.json` marked `running` is written before any compute and
//! rewritten as `complete`, `partial` or `failed` at the end, so a directory
//! is never left half-written without saying so.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use retrainbench_core::analysis::{self, CostModel};
use retrainbench_core::backtest::{self, BacktestRun, RunInputs};
use retrainbench_core::features::FeatureBuilder;
use retrainbench_core::metrics::{self, AggregateOptions, Metric};
use retrainbench_core::panel::{filter_min_length, generate_synthetic, ingest_csv, TimeSeriesPanel};

use crate::config::{DataSource, ResolvedConfig, RunConfig};
use crate::CliError;

pub const FORECASTS: &str = "forecasts.csv";
pub const FITS: &str = "fits.csv";
pub const METRICS: &str = "metrics.csv";
pub const METRICS_DETAIL: &str = "metrics_detail.csv";
pub const STATS: &str = "stats.json";
pub const COST: &str = "cost.csv";
pub const OPTIMAL: &str = "optimal.csv";
pub const OPTIMAL_BY_MODEL: &str = "optimal_by_model.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const MANIFEST: &str = "manifest.json";
pub const FEATURES_DUMP: &str = "features.csv";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub output: Option<PathBuf>,
    pub jobs: usize,
    /// Also write the first origin's training matrix.
    pub dump_features: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            output: None,
            jobs: 1,
            dump_features: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub cells_ok: usize,
    pub cells_failed: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct CellEntry {
    model: String,
    r: usize,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ct_wall_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    status: &'static str,
    tool: &'static str,
    version: &'static str,
    config: String,
    synthetic_seed: Option<u64>,
    mlp_seed: u64,
    jobs: usize,
    started_unix_s: u64,
    wall_seconds: f64,
    n_series: Option<usize>,
    n_series_dropped: Option<usize>,
    panel_length: Option<usize>,
    cells: Vec<CellEntry>,
    artifacts: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl Manifest {
    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(CliError::runtime)?;
        std::fs::write(dir.join(MANIFEST), text + "\n").map_err(CliError::runtime)
    }
}

/// Loads the configured panel and drops series shorter than `min_obs`.
/// Returns the panel and the number of dropped series.
pub fn load_panel(cfg: &ResolvedConfig) -> Result<(TimeSeriesPanel, usize), CliError> {
    let frequency = cfg.backtest.frequency;
    let panel = match &cfg.source {
        DataSource::Csv {
            demand,
            statics,
            calendar,
        } => ingest_csv(demand, statics.as_deref(), calendar.as_deref(), frequency).map_err(CliError::runtime)?,
        DataSource::Synthetic(spec) => generate_synthetic(spec).map_err(CliError::runtime)?,
    };
    let before = panel.n_series();
    let panel = filter_min_length(&panel, cfg.min_obs).map_err(CliError::runtime)?;
    let dropped = before - panel.n_series();
    if dropped > 0 {
        log::info!("dropped {dropped} series shorter than {} observations", cfg.min_obs);
    }
    Ok((panel, dropped))
}

/// Loads, validates and runs the config at `path`.
pub fn run(path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let cfg = RunConfig::load(path)?.resolve()?;
    run_resolved(&cfg, &path.display().to_string(), opts)
}

pub fn run_resolved(cfg: &ResolvedConfig, config_label: &str, opts: &RunOptions) -> Result<RunSummary, CliError> {
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    let out = opts.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let started = Instant::now();
    let mut manifest = Manifest {
        status: "running",
        tool: "retrainbench",
        version: env!("CARGO_PKG_VERSION"),
        config: config_label.to_string(),
        synthetic_seed: match &cfg.source {
            DataSource::Synthetic(s) => Some(s.rng_seed),
            DataSource::Csv { .. } => None,
        },
        mlp_seed: cfg.models.mlp.rng_seed,
        jobs: opts.jobs,
        started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        wall_seconds: 0.0,
        n_series: None,
        n_series_dropped: None,
        panel_length: None,
        cells: Vec::new(),
        artifacts: Vec::new(),
        error: None,
    };
    manifest.write(&out)?;

    let result = execute(cfg, &out, opts, &mut manifest);
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    match &result {
        Ok(s) if s.cells_failed == 0 => manifest.status = "complete",
        Ok(s) if s.cells_ok > 0 => manifest.status = "partial",
        Ok(_) => {
            manifest.status = "failed";
            manifest.error = Some("every grid cell failed".into());
        }
        Err(e) => {
            manifest.status = "failed";
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(&out)?;
    let summary = result?;
    if summary.cells_ok == 0 {
        return Err(CliError::Runtime(format!(
            "every grid cell failed; see {}",
            out.join(MANIFEST).display()
        )));
    }
    if summary.cells_failed > 0 {
        return Err(CliError::PartialGrid {
            failed: summary.cells_failed,
            total: summary.cells_ok + summary.cells_failed,
        });
    }
    Ok(summary)
}

fn execute(
    cfg: &ResolvedConfig,
    out: &Path,
    opts: &RunOptions,
    manifest: &mut Manifest,
) -> Result<RunSummary, CliError> {
    std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()).map_err(CliError::runtime)?;
    manifest.artifacts.push(RESOLVED_CONFIG);

    let (panel, dropped) = load_panel(cfg)?;
    manifest.n_series = Some(panel.n_series());
    manifest.n_series_dropped = Some(dropped);
    manifest.panel_length = Some(panel.len());
    log::info!("panel: {} series x {} periods", panel.n_series(), panel.len());

    if opts.dump_features {
        let builder = FeatureBuilder::new(&panel, &cfg.features).map_err(CliError::runtime)?;
        let origins = backtest::enumerate_origins(&cfg.backtest, panel.len(), cfg.features.warm_up() + 1)
            .map_err(CliError::runtime)?;
        let matrix = builder.training_matrix(origins[0]).map_err(CliError::runtime)?;
        matrix
            .write_csv(&panel, &out.join(FEATURES_DUMP))
            .map_err(CliError::runtime)?;
        manifest.artifacts.push(FEATURES_DUMP);
    }

    let inputs = RunInputs {
        features: &cfg.features,
        models: &cfg.models,
        quantiles: &cfg.quantiles,
        config: &cfg.backtest,
    };
    let grid = backtest::run_grid(&panel, &cfg.families, inputs, opts.jobs).map_err(CliError::runtime)?;
    let mut runs: Vec<&BacktestRun> = Vec::new();
    for cell in &grid {
        manifest.cells.push(match &cell.outcome {
            Ok(run) => {
                runs.push(run);
                CellEntry {
                    model: cell.family.to_string(),
                    r: cell.r,
                    status: "ok",
                    error: None,
                    fits: Some(run.fit_events.len()),
                    ct_wall_s: Some(run.ct_wall_seconds()),
                }
            }
            Err(e) => CellEntry {
                model: cell.family.to_string(),
                r: cell.r,
                status: "failed",
                error: Some(e.clone()),
                fits: None,
                ct_wall_s: None,
            },
        });
    }
    let cells_ok = runs.len();
    let cells_failed = grid.len() - cells_ok;
    let summary = RunSummary {
        output_dir: out.to_path_buf(),
        cells_ok,
        cells_failed,
        warnings: cfg.warnings.clone(),
    };
    if runs.is_empty() {
        return Ok(summary);
    }

    backtest::write_forecasts_csv(&runs, &panel, &out.join(FORECASTS)).map_err(CliError::runtime)?;
    backtest::write_fits_csv(&runs, &panel, &out.join(FITS)).map_err(CliError::runtime)?;
    manifest.artifacts.extend([FORECASTS, FITS]);

    let options = AggregateOptions {
        scale_once: cfg.scale_once,
    };
    let frame = metrics::aggregate(&runs, &panel, options).map_err(CliError::runtime)?;
    frame.write_summary_csv(&out.join(METRICS)).map_err(CliError::runtime)?;
    frame
        .write_detail_csv(&panel, &out.join(METRICS_DETAIL))
        .map_err(CliError::runtime)?;
    manifest.artifacts.extend([METRICS, METRICS_DETAIL]);

    analysis::write_stats_json(&frame, cfg.alpha, &out.join(STATS)).map_err(CliError::runtime)?;
    let cost_model = CostModel {
        n_series_dataset: panel.n_series(),
        ..cfg.cost.clone()
    };
    let costs = analysis::cost_table(&frame, &cost_model).map_err(CliError::runtime)?;
    analysis::write_cost_csv(&costs, &out.join(COST)).map_err(CliError::runtime)?;
    manifest.artifacts.extend([STATS, COST]);

    let optimal = |m| -> Result<_, CliError> {
        let a = analysis::optimal_frequency(&frame, Metric::Rmsse, m).map_err(CliError::runtime)?;
        let b = analysis::optimal_frequency(&frame, Metric::Smql, m).map_err(CliError::runtime)?;
        Ok((a, b))
    };
    let (rm, sm) = optimal(None)?;
    analysis::write_optimal_csv(&rm, &sm, &out.join(OPTIMAL)).map_err(CliError::runtime)?;
    let per_model = frame
        .models()
        .into_iter()
        .map(|m| optimal(Some(m)))
        .collect::<Result<Vec<_>, _>>()?;
    analysis::write_optimal_by_model_csv(&per_model, &out.join(OPTIMAL_BY_MODEL)).map_err(CliError::runtime)?;
    manifest.artifacts.extend([OPTIMAL, OPTIMAL_BY_MODEL]);
    Ok(summary)
}
