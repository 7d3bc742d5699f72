//! Run configuration: one TOML file with nested sections.
//!
//! Every section is optional except `dataset`. Frequency-dependent values
//! (horizon, test size, retrain set, lags, ...) default per frequency;
//! [`RunConfig::resolve`] fills them in and the resolved form is written next
//! to the run artifacts so that a run can be repeated from that one file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use retrainbench_core::analysis::{nemenyi_q, CostModel};
use retrainbench_core::backtest::{BacktestConfig, WindowMode};
use retrainbench_core::features::{CalendarField, EventEncoding, FeatureConfig, StaticEncoding, TargetTransform};
use retrainbench_core::models::{GbtParams, LinearParams, MlpParams, ModelFamily, ModelSpec, QuantileLevels};
use retrainbench_core::panel::{Frequency, SyntheticSpec};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub frequency: Frequency,
    /// Series shorter than this are dropped; defaults to 730 daily, 157 weekly.
    pub min_obs: Option<usize>,
    /// `unique_id,ds,y` demand file.
    pub demand: Option<PathBuf>,
    /// `unique_id,<attr>...` static attributes.
    pub statics: Option<PathBuf>,
    /// `ds,<event>...` calendar covariates.
    pub calendar: Option<PathBuf>,
    /// Synthetic panel generator settings; `frequency` is taken from this
    /// section when omitted.
    pub synthetic: Option<toml::Table>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub lags: Option<Vec<usize>>,
    pub rolling_windows: Option<Vec<usize>>,
    pub use_expanding_mean: Option<bool>,
    pub calendar_fields: Option<Vec<CalendarField>>,
    pub static_encoding: Option<StaticEncoding>,
    pub event_encoding: Option<EventEncoding>,
    pub target_transform: Option<TargetTransform>,
}

fn default_families() -> Vec<ModelFamily> {
    vec![ModelFamily::PooledLinear, ModelFamily::Gbt, ModelFamily::Mlp]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    #[serde(default = "default_families")]
    pub families: Vec<ModelFamily>,
    /// Probability levels; defaults to the fourteen standard levels.
    pub quantiles: Option<Vec<f64>>,
    /// Seed of every stochastic learner; overrides `mlp.rng_seed`.
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub pooled_linear: LinearParams,
    #[serde(default)]
    pub gbt: GbtParams,
    #[serde(default)]
    pub mlp: MlpParams,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            families: default_families(),
            quantiles: None,
            rng_seed: None,
            pooled_linear: LinearParams::default(),
            gbt: GbtParams::default(),
            mlp: MlpParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    pub horizon: Option<usize>,
    pub test_size: Option<usize>,
    pub step_size: Option<usize>,
    pub retrain_set: Option<Vec<usize>>,
    pub baseline_r: Option<usize>,
    /// Seasonal period of metric scaling and the naive benchmark.
    pub season: Option<usize>,
    /// Scale every origin by the first training window only.
    #[serde(default)]
    pub scale_once: bool,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_rate() -> f64 {
    CostModel::DEFAULT_RATE
}
fn default_target() -> usize {
    CostModel::DEFAULT_TARGET
}
fn default_currency() -> String {
    "USD".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Significance level of the Nemenyi comparisons (0.05 or 0.10).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rate")]
    pub rate_per_hour: f64,
    /// Fleet size the measured cost is extrapolated to.
    #[serde(default = "default_target")]
    pub n_series_target: usize,
    #[serde(default = "default_currency")]
    pub currency: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            rate_per_hour: default_rate(),
            n_series_target: default_target(),
            currency: default_currency(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("retrainbench-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

/// Where the panel comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv {
        demand: PathBuf,
        statics: Option<PathBuf>,
        calendar: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub raw: RunConfig,
    pub source: DataSource,
    pub min_obs: usize,
    pub features: FeatureConfig,
    pub families: Vec<ModelFamily>,
    pub quantiles: QuantileLevels,
    pub models: ModelSpec,
    pub backtest: BacktestConfig,
    pub scale_once: bool,
    pub alpha: f64,
    pub cost: CostModel,
    pub output_dir: PathBuf,
    pub warnings: Vec<String>,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.dataset.demand,
            &mut cfg.dataset.statics,
            &mut cfg.dataset.calendar,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut cfg.output.dir);
        Ok(cfg)
    }

    /// Fills in defaults and validates the whole configuration; the first
    /// violation found is returned.
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        let ds = &self.dataset;
        let frequency = ds.frequency;
        let source = match (&ds.demand, &ds.synthetic) {
            (Some(_), Some(_)) => return Err(invalid("dataset", "set either `demand` or `synthetic`, not both")),
            (None, None) => return Err(invalid("dataset", "one of `demand` or `synthetic` is required")),
            (Some(demand), None) => DataSource::Csv {
                demand: demand.clone(),
                statics: ds.statics.clone(),
                calendar: ds.calendar.clone(),
            },
            (None, Some(table)) => {
                if ds.statics.is_some() || ds.calendar.is_some() {
                    return Err(invalid(
                        "dataset",
                        "`statics`/`calendar` files cannot accompany a synthetic panel",
                    ));
                }
                let mut table = table.clone();
                table
                    .entry("frequency")
                    .or_insert_with(|| toml::Value::String(frequency.as_str().into()));
                let spec = SyntheticSpec::deserialize(table).map_err(|e| invalid("dataset.synthetic", e.message()))?;
                if spec.frequency != frequency {
                    return Err(invalid("dataset.synthetic.frequency", "must match dataset.frequency"));
                }
                spec.validate().map_err(|e| invalid("dataset.synthetic", e))?;
                DataSource::Synthetic(spec)
            }
        };
        let min_obs = ds.min_obs.unwrap_or(frequency.default_min_obs());
        if min_obs == 0 {
            return Err(invalid("dataset.min_obs", "must be positive"));
        }

        let f = &self.features;
        let d = FeatureConfig::for_frequency(frequency);
        let features = FeatureConfig {
            lags: f.lags.clone().unwrap_or(d.lags),
            rolling_windows: f.rolling_windows.clone().unwrap_or(d.rolling_windows),
            use_expanding_mean: f.use_expanding_mean.unwrap_or(d.use_expanding_mean),
            calendar_fields: f.calendar_fields.clone().unwrap_or(d.calendar_fields),
            static_encoding: f.static_encoding.unwrap_or(d.static_encoding),
            event_encoding: f.event_encoding.unwrap_or(d.event_encoding),
            target_transform: f.target_transform.unwrap_or(d.target_transform),
        };
        features.validate().map_err(|e| invalid("features", e))?;

        let m = &self.models;
        if m.families.is_empty() {
            return Err(invalid("models.families", "at least one family is required"));
        }
        for (i, fam) in m.families.iter().enumerate() {
            if m.families[..i].contains(fam) {
                return Err(invalid("models.families", format!("{fam} listed twice")));
            }
        }
        let quantiles = match &m.quantiles {
            Some(q) => QuantileLevels::new(q.clone()).map_err(|e| invalid("models.quantiles", e))?,
            None => QuantileLevels::default(),
        };
        if quantiles.is_empty() {
            return Err(invalid("models.quantiles", "at least one level is required"));
        }
        let mut models = ModelSpec {
            pooled_linear: m.pooled_linear.clone(),
            gbt: m.gbt.clone(),
            mlp: m.mlp.clone(),
        };
        if let Some(seed) = m.rng_seed {
            models.mlp.rng_seed = seed;
        }
        for fam in &m.families {
            match fam {
                ModelFamily::PooledLinear => models.pooled_linear.validate(),
                ModelFamily::Gbt => models.gbt.validate(),
                ModelFamily::Mlp => models.mlp.validate(),
                ModelFamily::SeasonalNaive => Ok(()),
            }
            .map_err(|e| invalid(&format!("models.{fam}"), e))?;
        }

        let b = &self.backtest;
        let d = BacktestConfig::for_frequency(frequency);
        let retrain_set = b.retrain_set.clone().unwrap_or(d.retrain_set.clone());
        let baseline_r = b.baseline_r.unwrap_or(if b.retrain_set.is_some() {
            retrain_set.first().copied().unwrap_or(d.baseline_r)
        } else {
            d.baseline_r
        });
        let backtest = BacktestConfig {
            horizon: b.horizon.unwrap_or(d.horizon),
            test_size: b.test_size.unwrap_or(d.test_size),
            step_size: b.step_size.unwrap_or(d.step_size),
            retrain_set,
            baseline_r,
            frequency,
            season: b.season.unwrap_or(d.season),
            window_mode: WindowMode::Expanding,
        };
        backtest.validate().map_err(|e| invalid("backtest", e))?;
        let needed = backtest.test_size + features.warm_up().max(backtest.season) + 1;
        if min_obs < needed {
            return Err(invalid(
                "dataset.min_obs",
                format!(
                    "{min_obs} leaves too little history: test_size {} plus feature warm-up {} needs at least {needed}",
                    backtest.test_size,
                    features.warm_up()
                ),
            ));
        }
        if let DataSource::Synthetic(spec) = &source {
            if spec.length < min_obs {
                return Err(invalid(
                    "dataset.synthetic.length",
                    format!(
                        "{} is below min_obs {min_obs}; every series would be dropped",
                        spec.length
                    ),
                ));
            }
        }

        let a = &self.analysis;
        if nemenyi_q(backtest.retrain_set.len().max(2), a.alpha).is_none() {
            return Err(invalid(
                "analysis.alpha",
                "critical values are tabulated for 0.05 and 0.10 only",
            ));
        }
        if !(a.rate_per_hour > 0.0 && a.rate_per_hour.is_finite()) {
            return Err(invalid("analysis.rate_per_hour", "must be positive"));
        }
        if a.n_series_target == 0 {
            return Err(invalid("analysis.n_series_target", "must be positive"));
        }

        let mut warnings = Vec::new();
        if frequency == Frequency::Daily && backtest.retrain_set.first().is_some_and(|&r| r < 7) {
            warnings.push(
                "backtest.retrain_set: daily runs conventionally start at r=7 (weekly retraining is the daily baseline)"
                    .to_string(),
            );
        }
        if nemenyi_q(backtest.retrain_set.len(), a.alpha).is_none() && backtest.retrain_set.len() > 20 {
            warnings.push("backtest.retrain_set: more than 20 scenarios; no Nemenyi critical difference".into());
        }

        Ok(ResolvedConfig {
            raw: self.clone(),
            source,
            min_obs,
            features,
            families: m.families.clone(),
            quantiles,
            models,
            backtest,
            scale_once: b.scale_once,
            alpha: a.alpha,
            cost: CostModel {
                rate_per_hour: a.rate_per_hour,
                n_series_dataset: 1,
                n_series_target: a.n_series_target,
                currency: a.currency.clone(),
            },
            output_dir: self.output.dir.clone(),
            warnings,
        })
    }
}

impl ResolvedConfig {
    /// The configuration with every default written out explicitly.
    pub fn to_run_config(&self) -> RunConfig {
        let (demand, statics, calendar, synthetic) = match &self.source {
            DataSource::Csv {
                demand,
                statics,
                calendar,
            } => (Some(demand.clone()), statics.clone(), calendar.clone(), None),
            DataSource::Synthetic(spec) => (
                None,
                None,
                None,
                Some(toml::Table::try_from(spec).expect("serialisable spec")),
            ),
        };
        let f = &self.features;
        let b = &self.backtest;
        RunConfig {
            dataset: DatasetSection {
                frequency: b.frequency,
                min_obs: Some(self.min_obs),
                demand,
                statics,
                calendar,
                synthetic,
            },
            features: FeaturesSection {
                lags: Some(f.lags.clone()),
                rolling_windows: Some(f.rolling_windows.clone()),
                use_expanding_mean: Some(f.use_expanding_mean),
                calendar_fields: Some(f.calendar_fields.clone()),
                static_encoding: Some(f.static_encoding),
                event_encoding: Some(f.event_encoding),
                target_transform: Some(f.target_transform),
            },
            models: ModelsSection {
                families: self.families.clone(),
                quantiles: Some(self.quantiles.as_slice().to_vec()),
                rng_seed: Some(self.models.mlp.rng_seed),
                pooled_linear: self.models.pooled_linear.clone(),
                gbt: self.models.gbt.clone(),
                mlp: self.models.mlp.clone(),
            },
            backtest: BacktestSection {
                horizon: Some(b.horizon),
                test_size: Some(b.test_size),
                step_size: Some(b.step_size),
                retrain_set: Some(b.retrain_set.clone()),
                baseline_r: Some(b.baseline_r),
                season: Some(b.season),
                scale_once: self.scale_once,
            },
            analysis: AnalysisSection {
                alpha: self.alpha,
                rate_per_hour: self.cost.rate_per_hour,
                n_series_target: self.cost.n_series_target,
                currency: self.cost.currency.clone(),
            },
            output: OutputSection {
                dir: self.output_dir.clone(),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_run_config()).expect("config serialises to TOML")
    }
}
