//! Causal feature engineering for global models.
//!
//! Every row describes one (series, timestamp) pair and only uses demand
//! strictly before that timestamp: lags, rolling means of the lag-1 series,
//! the expanding mean, calendar fields of the row date, static attributes of
//! the series and calendar events. Rows inside the warm-up prefix (where some
//! lag or window is undefined) are dropped.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{Frequency, TimeSeriesPanel};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("training window of {window} periods is too short for a warm-up of {warm_up}")]
    WindowTooShort { window: usize, warm_up: usize },
    #[error("prediction suffix has {found} values but {expected} are needed to reach the target index")]
    SuffixLengthMismatch { expected: usize, found: usize },
    #[error("index {index} is outside the panel (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalendarField {
    Year,
    Quarter,
    Month,
    Week,
    Dayofweek,
    Day,
}

impl CalendarField {
    fn name(self) -> &'static str {
        match self {
            CalendarField::Year => "year",
            CalendarField::Quarter => "quarter",
            CalendarField::Month => "month",
            CalendarField::Week => "week",
            CalendarField::Dayofweek => "dayofweek",
            CalendarField::Day => "day",
        }
    }

    fn value(self, date: NaiveDate) -> f64 {
        match self {
            CalendarField::Year => date.year() as f64,
            CalendarField::Quarter => ((date.month0() / 3) + 1) as f64,
            CalendarField::Month => date.month() as f64,
            CalendarField::Week => date.iso_week().week() as f64,
            CalendarField::Dayofweek => date.weekday().num_days_from_monday() as f64,
            CalendarField::Day => date.day() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticEncoding {
    #[default]
    OneHot,
    Ordinal,
}

/// Encoding of calendar event columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventEncoding {
    #[default]
    OneHot,
    Label,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTransform {
    #[default]
    None,
    Log1p,
}

impl TargetTransform {
    #[inline]
    pub fn forward(self, y: f64) -> f64 {
        match self {
            TargetTransform::None => y,
            TargetTransform::Log1p => y.ln_1p(),
        }
    }

    #[inline]
    pub fn inverse(self, z: f64) -> f64 {
        match self {
            TargetTransform::None => z,
            TargetTransform::Log1p => z.exp_m1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub lags: Vec<usize>,
    /// Rolling means over the lag-1 series.
    pub rolling_windows: Vec<usize>,
    pub use_expanding_mean: bool,
    pub calendar_fields: Vec<CalendarField>,
    #[serde(default)]
    pub static_encoding: StaticEncoding,
    #[serde(default)]
    pub event_encoding: EventEncoding,
    #[serde(default)]
    pub target_transform: TargetTransform,
}

impl FeatureConfig {
    pub fn daily_default() -> Self {
        use CalendarField::*;
        Self {
            lags: vec![1, 7, 14, 28],
            rolling_windows: vec![7, 28],
            use_expanding_mean: true,
            calendar_fields: vec![Year, Quarter, Month, Week, Dayofweek, Day],
            static_encoding: StaticEncoding::OneHot,
            event_encoding: EventEncoding::OneHot,
            target_transform: TargetTransform::None,
        }
    }

    pub fn weekly_default() -> Self {
        use CalendarField::*;
        Self {
            lags: vec![1, 2, 4, 13, 52],
            rolling_windows: vec![4, 13],
            use_expanding_mean: true,
            calendar_fields: vec![Year, Quarter, Month, Week],
            static_encoding: StaticEncoding::OneHot,
            event_encoding: EventEncoding::OneHot,
            target_transform: TargetTransform::None,
        }
    }

    pub fn for_frequency(frequency: Frequency) -> Self {
        match frequency {
            Frequency::Daily => Self::daily_default(),
            Frequency::Weekly => Self::weekly_default(),
        }
    }

    /// A config with only the given lags.
    pub fn lags_only(lags: &[usize]) -> Self {
        Self {
            lags: lags.to_vec(),
            rolling_windows: Vec::new(),
            use_expanding_mean: false,
            calendar_fields: Vec::new(),
            static_encoding: StaticEncoding::OneHot,
            event_encoding: EventEncoding::OneHot,
            target_transform: TargetTransform::None,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let strictly_increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if self.lags.contains(&0) || !strictly_increasing(&self.lags) {
            return Err(FeatureError::InvalidConfig(
                "lags must be positive, sorted ascending and unique".into(),
            ));
        }
        if self.rolling_windows.contains(&0) || !strictly_increasing(&self.rolling_windows) {
            return Err(FeatureError::InvalidConfig(
                "rolling windows must be positive, sorted ascending and unique".into(),
            ));
        }
        for (i, f) in self.calendar_fields.iter().enumerate() {
            if self.calendar_fields[..i].contains(f) {
                return Err(FeatureError::InvalidConfig(format!(
                    "calendar field `{}` listed twice",
                    f.name()
                )));
            }
        }
        Ok(())
    }

    /// Number of leading observations per series that cannot produce a row.
    pub fn warm_up(&self) -> usize {
        let lag = self.lags.iter().copied().max().unwrap_or(0);
        let window = self.rolling_windows.iter().copied().max().unwrap_or(0);
        let expanding = usize::from(self.use_expanding_mean);
        lag.max(window).max(expanding)
    }
}

/// Pooled supervised view of a training window.
///
/// `target` is on the transformed scale named by `target_transform`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    /// Row-major, `n_rows * n_cols`.
    pub data: Vec<f64>,
    pub target: Vec<f64>,
    /// Series index (into the panel) of every row.
    pub series: Vec<usize>,
    /// Panel index of every row's timestamp.
    pub time: Vec<usize>,
    pub target_transform: TargetTransform,
}

impl FeatureMatrix {
    /// Builds a matrix from raw parts, mostly for tests and tooling.
    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>], target: Vec<f64>) -> Self {
        assert_eq!(rows.len(), target.len());
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), columns.len());
                r.iter().copied()
            })
            .collect();
        Self {
            columns,
            data,
            series: vec![0; target.len()],
            time: (0..target.len()).collect(),
            target,
            target_transform: TargetTransform::None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    /// Debug dump: `unique_id,ds,<columns...>,target`.
    pub fn write_csv(&self, panel: &TimeSeriesPanel, path: &Path) -> Result<(), FeatureError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "unique_id,ds,{},target", self.columns.join(","))?;
        for i in 0..self.n_rows() {
            write!(
                out,
                "{},{}",
                panel.series_ids()[self.series[i]],
                panel.dates()[self.time[i]]
            )?;
            for v in self.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{}", self.target[i])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Feature layout bound to one panel: column order, static and event levels
/// and the transformed demand history.
#[derive(Debug, Clone)]
pub struct FeatureBuilder<'a> {
    panel: &'a TimeSeriesPanel,
    config: FeatureConfig,
    columns: Vec<String>,
    static_levels: Vec<Vec<String>>,
    event_levels: Vec<Vec<String>>,
    transformed: Vec<Vec<f64>>,
}

fn sorted_levels<'s>(values: impl Iterator<Item = &'s String>) -> Vec<String> {
    let mut levels: Vec<String> = values.cloned().collect();
    levels.sort();
    levels.dedup();
    levels
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(panel: &'a TimeSeriesPanel, config: &FeatureConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let static_levels: Vec<Vec<String>> = (0..panel.static_names().len())
            .map(|a| sorted_levels((0..panel.n_series()).map(|i| &panel.statics(i)[a])))
            .collect();
        let event_levels: Vec<Vec<String>> = (0..panel.calendar_names().len())
            .map(|e| sorted_levels((0..panel.len()).map(|t| &panel.calendar(t)[e])))
            .collect();

        let mut columns = Vec::new();
        columns.extend(config.lags.iter().map(|k| format!("lag_{k}")));
        columns.extend(config.rolling_windows.iter().map(|w| format!("roll_mean_{w}")));
        if config.use_expanding_mean {
            columns.push("expanding_mean".into());
        }
        columns.extend(config.calendar_fields.iter().map(|f| format!("cal_{}", f.name())));
        for (name, levels) in panel.static_names().iter().zip(&static_levels) {
            match config.static_encoding {
                StaticEncoding::OneHot => columns.extend(levels.iter().map(|l| format!("static_{name}={l}"))),
                StaticEncoding::Ordinal => columns.push(format!("static_{name}")),
            }
        }
        for (name, levels) in panel.calendar_names().iter().zip(&event_levels) {
            match config.event_encoding {
                EventEncoding::OneHot => columns.extend(levels.iter().map(|l| format!("event_{name}={l}"))),
                EventEncoding::Label => columns.push(format!("event_{name}")),
            }
        }

        let transformed = (0..panel.n_series())
            .map(|i| {
                panel
                    .values(i)
                    .iter()
                    .map(|&y| config.target_transform.forward(y))
                    .collect()
            })
            .collect();

        Ok(Self {
            panel,
            config: config.clone(),
            columns,
            static_levels,
            event_levels,
            transformed,
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn panel(&self) -> &TimeSeriesPanel {
        self.panel
    }

    /// Appends the features of the row at local position `hist.len()` of
    /// series `series`, which sits at panel index `index`.
    fn fill_row(&self, series: usize, hist: &[f64], expanding_sum: f64, index: usize, out: &mut Vec<f64>) {
        let t = hist.len();
        for &k in &self.config.lags {
            out.push(hist[t - k]);
        }
        for &w in &self.config.rolling_windows {
            let mut acc = 0.0;
            for &v in &hist[t - w..t] {
                acc += v;
            }
            out.push(acc / w as f64);
        }
        if self.config.use_expanding_mean {
            out.push(expanding_sum / t as f64);
        }
        let date = self.panel.dates()[index];
        for f in &self.config.calendar_fields {
            out.push(f.value(date));
        }
        for (a, levels) in self.static_levels.iter().enumerate() {
            encode(
                &self.panel.statics(series)[a],
                levels,
                self.config.static_encoding == StaticEncoding::OneHot,
                out,
            );
        }
        for (e, levels) in self.event_levels.iter().enumerate() {
            encode(
                &self.panel.calendar(index)[e],
                levels,
                self.config.event_encoding == EventEncoding::OneHot,
                out,
            );
        }
    }

    /// Pooled training rows for every timestamp before `end_index`
    /// (exclusive), in series order then time order.
    pub fn training_matrix(&self, end_index: usize) -> Result<FeatureMatrix, FeatureError> {
        if end_index > self.panel.len() {
            return Err(FeatureError::IndexOutOfRange {
                index: end_index,
                len: self.panel.len(),
            });
        }
        let warm_up = self.config.warm_up();
        let d = self.columns.len();
        let mut m = FeatureMatrix {
            columns: self.columns.clone(),
            data: Vec::new(),
            target: Vec::new(),
            series: Vec::new(),
            time: Vec::new(),
            target_transform: self.config.target_transform,
        };
        let mut longest = 0;
        for i in 0..self.panel.n_series() {
            let offset = self.panel.offset(i);
            let window = end_index.saturating_sub(offset);
            longest = longest.max(window);
            let y = &self.transformed[i][..window];
            let mut acc = 0.0;
            for t in 0..window {
                if t >= warm_up {
                    self.fill_row(i, &y[..t], acc, offset + t, &mut m.data);
                    m.target.push(y[t]);
                    m.series.push(i);
                    m.time.push(offset + t);
                }
                acc += y[t];
            }
        }
        if m.target.is_empty() {
            return Err(FeatureError::WindowTooShort {
                window: longest,
                warm_up,
            });
        }
        debug_assert_eq!(m.data.len(), m.target.len() * d);
        Ok(m)
    }

    /// Feature row for series `series` at panel index `at_index`, treating
    /// everything from `origin` onward as unobserved and substituting
    /// `suffix` (original demand scale) for indices `origin..at_index`.
    pub fn prediction_row(
        &self,
        series: usize,
        origin: usize,
        at_index: usize,
        suffix: &[f64],
        out: &mut Vec<f64>,
    ) -> Result<(), FeatureError> {
        if at_index >= self.panel.len() {
            return Err(FeatureError::IndexOutOfRange {
                index: at_index,
                len: self.panel.len(),
            });
        }
        if origin > at_index || at_index - origin != suffix.len() {
            return Err(FeatureError::SuffixLengthMismatch {
                expected: at_index.saturating_sub(origin),
                found: suffix.len(),
            });
        }
        let offset = self.panel.offset(series);
        let observed = origin.saturating_sub(offset);
        let mut hist = Vec::with_capacity(observed + suffix.len());
        hist.extend_from_slice(&self.transformed[series][..observed]);
        hist.extend(suffix.iter().map(|&y| self.config.target_transform.forward(y)));
        let warm_up = self.config.warm_up();
        if hist.len() < warm_up {
            return Err(FeatureError::WindowTooShort {
                window: hist.len(),
                warm_up,
            });
        }
        let mut acc = 0.0;
        for &v in &hist {
            acc += v;
        }
        self.fill_row(series, &hist, acc, at_index, out);
        Ok(())
    }
}

fn encode(value: &str, levels: &[String], one_hot: bool, out: &mut Vec<f64>) {
    let pos = levels.iter().position(|l| l == value);
    if one_hot {
        out.extend(levels.iter().map(|l| if l == value { 1.0 } else { 0.0 }));
    } else {
        out.push(pos.map(|p| p as f64).unwrap_or(-1.0));
    }
}

/// Builds the pooled training matrix for indices before `end_index`.
pub fn build_training_matrix(
    panel: &TimeSeriesPanel,
    end_index: usize,
    config: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    FeatureBuilder::new(panel, config)?.training_matrix(end_index)
}

/// Single prediction row; see [`FeatureBuilder::prediction_row`].
pub fn build_prediction_row(
    panel: &TimeSeriesPanel,
    series: usize,
    origin: usize,
    at_index: usize,
    config: &FeatureConfig,
    predicted_suffix: &[f64],
) -> Result<Vec<f64>, FeatureError> {
    let builder = FeatureBuilder::new(panel, config)?;
    let mut out = Vec::with_capacity(builder.columns().len());
    builder.prediction_row(series, origin, at_index, predicted_suffix, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{generate_synthetic, PanelParts, SyntheticSpec};

    fn single(values: &[f64]) -> TimeSeriesPanel {
        let start = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        TimeSeriesPanel::new(
            Frequency::Daily,
            PanelParts {
                dates: (0..values.len())
                    .map(|k| start + chrono::Duration::days(k as i64))
                    .collect(),
                series_ids: vec!["a".into()],
                values: vec![values.to_vec()],
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn lag_rows_index_directly() {
        let panel = single(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let m = build_training_matrix(&panel, 5, &FeatureConfig::lags_only(&[1, 2])).unwrap();
        assert_eq!(m.columns, vec!["lag_1", "lag_2"]);
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.data, vec![2.0, 1.0, 3.0, 2.0, 4.0, 3.0]);
        assert_eq!(m.target, vec![3.0, 4.0, 5.0]);
        assert_eq!(m.time, vec![2, 3, 4]);
    }

    #[test]
    fn rolling_mean_uses_lag_one_window() {
        let panel = single(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut cfg = FeatureConfig::lags_only(&[]);
        cfg.rolling_windows = vec![3];
        let m = build_training_matrix(&panel, 6, &cfg).unwrap();
        // Row for the 5th observation (index 4): mean of observations 2..4.
        let row = m.time.iter().position(|&t| t == 4).unwrap();
        assert_eq!(m.row(row), &[3.0]);
        assert_eq!(m.n_rows(), 3);
    }

    #[test]
    fn expanding_mean_of_constant_series_is_constant() {
        let panel = single(&[4.5; 20]);
        let mut cfg = FeatureConfig::lags_only(&[1]);
        cfg.use_expanding_mean = true;
        let m = build_training_matrix(&panel, 20, &cfg).unwrap();
        for i in 0..m.n_rows() {
            assert_eq!(m.row(i)[1], 4.5);
        }
    }

    #[test]
    fn window_shorter_than_warm_up_is_an_error() {
        let panel = single(&[1.0, 2.0, 3.0]);
        let err = build_training_matrix(&panel, 3, &FeatureConfig::lags_only(&[3])).unwrap_err();
        assert!(matches!(err, FeatureError::WindowTooShort { window: 3, warm_up: 3 }));
    }

    #[test]
    fn unsorted_lags_are_rejected() {
        let panel = single(&[1.0; 10]);
        assert!(build_training_matrix(&panel, 10, &FeatureConfig::lags_only(&[2, 1])).is_err());
    }

    fn synthetic() -> TimeSeriesPanel {
        let mut spec = SyntheticSpec::new(4, 120, Frequency::Daily, 5);
        spec.seasonality_amplitude = 0.4;
        generate_synthetic(&spec).unwrap()
    }

    #[test]
    fn row_count_matches_warm_up_formula_and_one_hot_is_exclusive() {
        let panel = synthetic();
        let cfg = FeatureConfig::daily_default();
        let m = build_training_matrix(&panel, 100, &cfg).unwrap();
        assert_eq!(m.n_rows(), panel.n_series() * (100 - cfg.warm_up()));
        let store_cols: Vec<usize> = m
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.starts_with("static_store="))
            .map(|(j, _)| j)
            .collect();
        assert!(!store_cols.is_empty());
        for i in 0..m.n_rows() {
            let active: f64 = store_cols.iter().map(|&j| m.row(i)[j]).sum();
            assert_eq!(active, 1.0);
        }
    }

    #[test]
    fn empty_suffix_matches_training_recipe() {
        let panel = synthetic();
        let cfg = FeatureConfig::daily_default();
        let builder = FeatureBuilder::new(&panel, &cfg).unwrap();
        let full = builder.training_matrix(panel.len()).unwrap();
        for s in 0..panel.n_series() {
            let mut row = Vec::new();
            builder.prediction_row(s, 90, 90, &[], &mut row).unwrap();
            let k = (0..full.n_rows())
                .find(|&k| full.series[k] == s && full.time[k] == 90)
                .unwrap();
            assert_eq!(row.as_slice(), full.row(k));
        }
    }

    #[test]
    fn suffix_feeds_lag_one() {
        let panel = synthetic();
        let cfg = FeatureConfig::daily_default();
        let builder = FeatureBuilder::new(&panel, &cfg).unwrap();
        let suffix = [3.0, 7.0, 11.0];
        let mut row = Vec::new();
        builder.prediction_row(1, 80, 83, &suffix, &mut row).unwrap();
        assert_eq!(row[0], 11.0);
        let err = builder.prediction_row(1, 80, 84, &suffix, &mut row).unwrap_err();
        assert!(matches!(
            err,
            FeatureError::SuffixLengthMismatch { expected: 4, found: 3 }
        ));
    }

    #[test]
    fn true_future_as_suffix_reproduces_full_panel_rows() {
        let panel = synthetic();
        let mut cfg = FeatureConfig::daily_default();
        cfg.target_transform = TargetTransform::Log1p;
        let builder = FeatureBuilder::new(&panel, &cfg).unwrap();
        let full = builder.training_matrix(panel.len()).unwrap();
        let origin = 70;
        for s in 0..panel.n_series() {
            for at in origin..origin + 28 {
                let suffix = &panel.values(s)[origin..at];
                let mut row = Vec::new();
                builder.prediction_row(s, origin, at, suffix, &mut row).unwrap();
                let k = (0..full.n_rows())
                    .find(|&k| full.series[k] == s && full.time[k] == at)
                    .unwrap();
                assert_eq!(row.as_slice(), full.row(k), "series {s} at {at}");
            }
        }
    }

    #[test]
    fn features_are_deterministic() {
        let panel = synthetic();
        let cfg = FeatureConfig::daily_default();
        assert_eq!(
            build_training_matrix(&panel, 110, &cfg).unwrap(),
            build_training_matrix(&panel, 110, &cfg).unwrap()
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn perturbing_a_value_never_changes_earlier_rows(t in 30usize..120, bump in 1.0f64..50.0) {
            let panel = synthetic();
            let cfg = FeatureConfig::daily_default();
            let mut v = panel.values(2).to_vec();
            v[t] += bump;
            let changed = panel.with_series_values(2, v).unwrap();
            let a = build_training_matrix(&panel, panel.len(), &cfg).unwrap();
            let b = build_training_matrix(&changed, panel.len(), &cfg).unwrap();
            for k in 0..a.n_rows() {
                if a.time[k] <= t {
                    proptest::prop_assert_eq!(a.row(k), b.row(k));
                }
            }
        }
    }
}
