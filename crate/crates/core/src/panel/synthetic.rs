//! Seeded generator for intermittent retail-like demand panels.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::{Frequency, PanelError, PanelParts, TimeSeriesPanel};

/// Parameters of a synthetic panel.
///
/// Each series draws its demand level uniformly from `base_rate` and a random
/// seasonal phase; demand at period `t` is zero with probability
/// `zero_inflation` and otherwise negative binomial with mean
/// `level * (1 + amplitude * sin(2*pi*t/period + phase)) * max(0, 1 + trend_slope * t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_series: usize,
    pub length: usize,
    pub frequency: Frequency,
    /// Range `[lo, hi]` the per-series mean level is drawn from.
    #[serde(default = "default_base_rate")]
    pub base_rate: (f64, f64),
    #[serde(default)]
    pub seasonality_amplitude: f64,
    #[serde(default)]
    pub zero_inflation: f64,
    #[serde(default)]
    pub trend_slope: f64,
    /// Negative binomial size parameter; `None` gives Poisson demand.
    #[serde(default = "default_dispersion")]
    pub dispersion: Option<f64>,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    /// Number of distinct levels of the `store` and `category` statics.
    #[serde(default = "default_static_levels")]
    pub static_levels: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_base_rate() -> (f64, f64) {
    (2.0, 20.0)
}

fn default_dispersion() -> Option<f64> {
    Some(2.0)
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 7).expect("valid date")
}

fn default_static_levels() -> usize {
    3
}

impl SyntheticSpec {
    pub fn new(n_series: usize, length: usize, frequency: Frequency, rng_seed: u64) -> Self {
        Self {
            n_series,
            length,
            frequency,
            base_rate: default_base_rate(),
            seasonality_amplitude: 0.0,
            zero_inflation: 0.0,
            trend_slope: 0.0,
            dispersion: default_dispersion(),
            start: default_start(),
            static_levels: default_static_levels(),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), PanelError> {
        let bad = |msg: String| Err(PanelError::InvalidSpec(msg));
        if self.n_series == 0 {
            return bad("n_series must be positive".into());
        }
        if self.length == 0 {
            return bad("length must be positive".into());
        }
        let (lo, hi) = self.base_rate;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad(format!("base_rate range ({lo}, {hi}) must satisfy 0 <= lo <= hi"));
        }
        if !(0.0..=1.0).contains(&self.seasonality_amplitude) {
            return bad("seasonality_amplitude must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.zero_inflation) {
            return bad("zero_inflation must lie in [0, 1)".into());
        }
        if !self.trend_slope.is_finite() {
            return bad("trend_slope must be finite".into());
        }
        if let Some(k) = self.dispersion {
            if !(k.is_finite() && k > 0.0) {
                return bad("dispersion must be positive".into());
            }
        }
        if self.static_levels == 0 {
            return bad("static_levels must be positive".into());
        }
        Ok(())
    }

    /// Expected demand of a series with level `level` and phase `phase` at period `t`.
    pub fn mean_at(&self, level: f64, phase: f64, t: usize) -> f64 {
        let period = self.frequency.seasonal_period() as f64;
        let angle = 2.0 * std::f64::consts::PI * t as f64 / period + phase;
        let season = 1.0 + self.seasonality_amplitude * angle.sin();
        let trend = (1.0 + self.trend_slope * t as f64).max(0.0);
        level * season * trend
    }
}

fn draw_count(rng: &mut ChaCha8Rng, mean: f64, dispersion: Option<f64>) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let lambda = match dispersion {
        Some(k) => Gamma::new(k, mean / k).expect("validated").sample(rng),
        None => mean,
    };
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

/// Generates a panel; identical specs give bit-identical panels.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TimeSeriesPanel, PanelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let step = spec.frequency.step_days();
    let dates: Vec<NaiveDate> = (0..spec.length)
        .map(|k| spec.start + chrono::Duration::days(step * k as i64))
        .collect();

    let width = spec.n_series.to_string().len();
    let mut series_ids = Vec::with_capacity(spec.n_series);
    let mut values = Vec::with_capacity(spec.n_series);
    let mut statics = Vec::with_capacity(spec.n_series);
    let (lo, hi) = spec.base_rate;
    for i in 0..spec.n_series {
        let level = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let series: Vec<f64> = (0..spec.length)
            .map(|t| {
                let structural_zero = rng.random::<f64>() < spec.zero_inflation;
                let count = draw_count(&mut rng, spec.mean_at(level, phase, t), spec.dispersion);
                if structural_zero {
                    0.0
                } else {
                    count
                }
            })
            .collect();
        series_ids.push(format!("item_{i:0width$}"));
        values.push(series);
        statics.push(vec![
            format!("store_{}", i % spec.static_levels),
            format!("cat_{}", (i / spec.static_levels) % spec.static_levels),
        ]);
    }

    TimeSeriesPanel::new(
        spec.frequency,
        PanelParts {
            dates,
            series_ids,
            values,
            static_names: vec!["store".into(), "category".into()],
            statics,
            ..Default::default()
        },
    )
}
