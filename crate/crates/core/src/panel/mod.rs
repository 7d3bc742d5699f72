//! Aligned demand panels.
//!
//! A [`TimeSeriesPanel`] holds many demand series on one shared, equally
//! spaced date index together with per-series categorical attributes
//! ("statics") and per-date covariates ("calendar").
//!
//! Freshly ingested panels may be *ragged at the start*: series can begin
//! at different dates as long as each one is gap-free and runs to the common
//! last date. [`filter_min_length`] drops short series and trims the index to
//! the span shared by every survivor, which yields a fully aligned panel.

mod io;
mod synthetic;

pub use io::{ingest_csv, write_calendar_csv, write_demand_csv, write_statics_csv};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: String, line: u64, reason: String },
    #[error("misaligned panel: series `{series}` {reason}")]
    MisalignedPanel { series: String, reason: String },
    #[error("negative demand {value} for series `{series}` at {date}")]
    NegativeDemand {
        series: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("frequency mismatch for series `{series}`: expected {expected_days}-day spacing, found {found_days}")]
    FrequencyMismatch {
        series: String,
        expected_days: i64,
        found_days: i64,
    },
    #[error("statics reference series `{0}` that has no demand rows")]
    UnknownSeries(String),
    #[error("series `{0}` has no statics row")]
    MissingStatics(String),
    #[error("calendar has no row for {0}")]
    CalendarGap(NaiveDate),
    #[error("panel is empty")]
    EmptyPanel,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid panel: {0}")]
    Invalid(String),
}

/// Sampling frequency of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Weekly,
}

impl Frequency {
    /// Seasonal period of the data (7 for daily, 52 for weekly).
    pub fn seasonal_period(self) -> usize {
        match self {
            Frequency::Daily => 7,
            Frequency::Weekly => 52,
        }
    }

    /// Seasonal lag used to scale RMSSE/SQL (7 for daily, 1 for weekly).
    pub fn metric_season(self) -> usize {
        match self {
            Frequency::Daily => 7,
            Frequency::Weekly => 1,
        }
    }

    /// Minimum series length kept by the default length filter.
    pub fn default_min_obs(self) -> usize {
        match self {
            Frequency::Daily => 730,
            Frequency::Weekly => 157,
        }
    }

    pub fn step_days(self) -> i64 {
        match self {
            Frequency::Daily => 1,
            Frequency::Weekly => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
        }
    }
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Demand panel with a shared date index.
///
/// `values[i]` is right-aligned on `dates`: it covers the last
/// `values[i].len()` dates of the index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    frequency: Frequency,
    dates: Vec<NaiveDate>,
    series_ids: Vec<String>,
    values: Vec<Vec<f64>>,
    static_names: Vec<String>,
    statics: Vec<Vec<String>>,
    calendar_names: Vec<String>,
    calendar: Vec<Vec<String>>,
}

/// Parts used to assemble a panel; see [`TimeSeriesPanel::new`].
#[derive(Debug, Clone, Default)]
pub struct PanelParts {
    pub dates: Vec<NaiveDate>,
    pub series_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub static_names: Vec<String>,
    pub statics: Vec<Vec<String>>,
    pub calendar_names: Vec<String>,
    pub calendar: Vec<Vec<String>>,
}

impl TimeSeriesPanel {
    /// Validates and assembles a panel. An empty `statics` means no static
    /// attributes; an empty `calendar` means no calendar covariates.
    pub fn new(frequency: Frequency, parts: PanelParts) -> Result<Self, PanelError> {
        let PanelParts {
            dates,
            series_ids,
            values,
            static_names,
            mut statics,
            calendar_names,
            mut calendar,
        } = parts;

        if series_ids.is_empty() || dates.is_empty() {
            return Err(PanelError::EmptyPanel);
        }
        if series_ids.len() != values.len() {
            return Err(PanelError::Invalid(format!(
                "{} series ids but {} value vectors",
                series_ids.len(),
                values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &series_ids {
            if !seen.insert(id.as_str()) {
                return Err(PanelError::Invalid(format!("duplicate series id `{id}`")));
            }
        }
        let step = frequency.step_days();
        for pair in dates.windows(2) {
            let found = (pair[1] - pair[0]).num_days();
            if found != step {
                return Err(PanelError::FrequencyMismatch {
                    series: "<index>".into(),
                    expected_days: step,
                    found_days: found,
                });
            }
        }
        for (id, series) in series_ids.iter().zip(&values) {
            if series.is_empty() || series.len() > dates.len() {
                return Err(PanelError::MisalignedPanel {
                    series: id.clone(),
                    reason: format!("has {} values for a {}-date index", series.len(), dates.len()),
                });
            }
            let offset = dates.len() - series.len();
            for (k, &v) in series.iter().enumerate() {
                if !v.is_finite() {
                    return Err(PanelError::Invalid(format!(
                        "non-finite demand for series `{id}` at {}",
                        dates[offset + k]
                    )));
                }
                if v < 0.0 {
                    return Err(PanelError::NegativeDemand {
                        series: id.clone(),
                        date: dates[offset + k],
                        value: v,
                    });
                }
            }
        }

        if statics.is_empty() && static_names.is_empty() {
            statics = vec![Vec::new(); series_ids.len()];
        }
        if statics.len() != series_ids.len() || statics.iter().any(|row| row.len() != static_names.len()) {
            return Err(PanelError::Invalid("statics table has the wrong shape".into()));
        }
        if calendar.is_empty() && calendar_names.is_empty() {
            calendar = vec![Vec::new(); dates.len()];
        }
        if calendar.len() != dates.len() || calendar.iter().any(|row| row.len() != calendar_names.len()) {
            return Err(PanelError::Invalid("calendar table has the wrong shape".into()));
        }

        Ok(Self {
            frequency,
            dates,
            series_ids,
            values,
            static_names,
            statics,
            calendar_names,
            calendar,
        })
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Number of timestamps in the shared index.
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_series(&self) -> usize {
        self.series_ids.len()
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn series_index(&self, id: &str) -> Option<usize> {
        self.series_ids.iter().position(|s| s == id)
    }

    /// Observed values of series `i`, right-aligned on the index.
    pub fn values(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// Index position of the first observation of series `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.dates.len() - self.values[i].len()
    }

    /// True when every series spans the full index.
    pub fn is_aligned(&self) -> bool {
        self.values.iter().all(|v| v.len() == self.dates.len())
    }

    pub fn static_names(&self) -> &[String] {
        &self.static_names
    }

    pub fn statics(&self, i: usize) -> &[String] {
        &self.statics[i]
    }

    pub fn calendar_names(&self) -> &[String] {
        &self.calendar_names
    }

    /// Calendar covariates at index position `t`.
    pub fn calendar(&self, t: usize) -> &[String] {
        &self.calendar[t]
    }

    /// Returns a copy with series `i` replaced, re-validated.
    pub fn with_series_values(&self, i: usize, values: Vec<f64>) -> Result<Self, PanelError> {
        let mut parts = self.clone().into_parts();
        parts.values[i] = values;
        Self::new(self.frequency, parts)
    }

    pub fn into_parts(self) -> PanelParts {
        PanelParts {
            dates: self.dates,
            series_ids: self.series_ids,
            values: self.values,
            static_names: self.static_names,
            statics: self.statics,
            calendar_names: self.calendar_names,
            calendar: self.calendar,
        }
    }

    /// Keeps the series in `keep` (in that order) and the trailing `len`
    /// dates of the index.
    fn select(&self, keep: &[usize], len: usize) -> Result<Self, PanelError> {
        let start = self.dates.len() - len;
        let parts = PanelParts {
            dates: self.dates[start..].to_vec(),
            series_ids: keep.iter().map(|&i| self.series_ids[i].clone()).collect(),
            values: keep
                .iter()
                .map(|&i| {
                    let v = &self.values[i];
                    v[v.len() - len..].to_vec()
                })
                .collect(),
            static_names: self.static_names.clone(),
            statics: keep.iter().map(|&i| self.statics[i].clone()).collect(),
            calendar_names: self.calendar_names.clone(),
            calendar: self.calendar[start..].to_vec(),
        };
        Self::new(self.frequency, parts)
    }
}

/// Keeps the series with at least `min_obs` observations and trims the index
/// to the span every survivor covers.
pub fn filter_min_length(panel: &TimeSeriesPanel, min_obs: usize) -> Result<TimeSeriesPanel, PanelError> {
    if min_obs == 0 {
        return Err(PanelError::Invalid("min_obs must be at least 1".into()));
    }
    let keep: Vec<usize> = (0..panel.n_series())
        .filter(|&i| panel.values(i).len() >= min_obs)
        .collect();
    if keep.is_empty() {
        return Err(PanelError::EmptyPanel);
    }
    let common = keep.iter().map(|&i| panel.values(i).len()).min().expect("non-empty");
    let dropped = panel.n_series() - keep.len();
    if dropped > 0 {
        log::info!("length filter dropped {dropped} series shorter than {min_obs}");
    }
    panel.select(&keep, common)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weekly_dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        (0..n).map(|k| start + chrono::Duration::days(7 * k as i64)).collect()
    }

    fn ragged(lengths: &[usize]) -> TimeSeriesPanel {
        let n = *lengths.iter().max().unwrap();
        TimeSeriesPanel::new(
            Frequency::Weekly,
            PanelParts {
                dates: weekly_dates(n),
                series_ids: (0..lengths.len()).map(|i| format!("s{i}")).collect(),
                values: lengths.iter().map(|&l| vec![1.0; l]).collect(),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn weekly_filter_keeps_long_enough_series() {
        let panel = ragged(&[156, 157, 200]);
        let out = filter_min_length(&panel, 157).unwrap();
        assert_eq!(out.series_ids(), &["s1".to_string(), "s2".to_string()]);
        assert!(out.is_aligned());
        assert_eq!(out.len(), 157);
    }

    #[test]
    fn daily_series_one_short_of_two_years_is_dropped() {
        let start = NaiveDate::from_ymd_opt(2011, 1, 29).unwrap();
        let dates: Vec<_> = (0..800).map(|k| start + chrono::Duration::days(k)).collect();
        let panel = TimeSeriesPanel::new(
            Frequency::Daily,
            PanelParts {
                dates,
                series_ids: vec!["short".into(), "long".into()],
                values: vec![vec![0.0; 729], vec![2.0; 800]],
                ..Default::default()
            },
        )
        .unwrap();
        let out = filter_min_length(&panel, Frequency::Daily.default_min_obs()).unwrap();
        assert_eq!(out.series_ids(), &["long".to_string()]);
        assert_eq!(out.len(), 800);
    }

    #[test]
    fn min_obs_one_is_a_no_op_on_aligned_panels() {
        let panel = ragged(&[30, 30, 30]);
        assert_eq!(filter_min_length(&panel, 1).unwrap(), panel);
    }

    #[test]
    fn filter_reports_empty_panel() {
        let panel = ragged(&[10, 12]);
        assert!(matches!(filter_min_length(&panel, 13), Err(PanelError::EmptyPanel)));
    }

    #[test]
    fn negative_values_are_rejected() {
        let err = TimeSeriesPanel::new(
            Frequency::Weekly,
            PanelParts {
                dates: weekly_dates(3),
                series_ids: vec!["a".into()],
                values: vec![vec![1.0, -0.5, 2.0]],
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, PanelError::NegativeDemand { .. }));
    }

    proptest::proptest! {
        #[test]
        fn filter_is_idempotent_and_monotone(
            lengths in proptest::collection::vec(1usize..60, 1..8),
            a in 1usize..60,
            b in 1usize..60,
        ) {
            let panel = ragged(&lengths);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let low = filter_min_length(&panel, lo);
            let high = filter_min_length(&panel, hi);
            if let Ok(low) = &low {
                let again = filter_min_length(low, lo).unwrap();
                proptest::prop_assert_eq!(&again, low);
                if let Ok(high) = &high {
                    proptest::prop_assert!(high.n_series() <= low.n_series());
                    for id in high.series_ids() {
                        proptest::prop_assert!(low.series_index(id).is_some());
                    }
                }
            } else {
                proptest::prop_assert!(high.is_err());
            }
        }
    }
}
