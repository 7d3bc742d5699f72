//! Global learners behind one fitted-model type.
//!
//! A [`GlobalModel`] shares its parameters across every series of the panel.
//! Feature-based families (`pooled_linear`, `gbt`, `mlp`) read rows built by
//! [`crate::features`]; the seasonal-naive benchmark reads the panel directly.
//! All families emit a point forecast plus one value per quantile level;
//! outputs are mapped back from the target transform, quantiles are sorted
//! (rearrangement) and everything is clipped at zero.

pub mod dump;
pub mod gbt;
pub mod linear;
pub mod mlp;
pub mod naive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, TargetTransform};
use crate::panel::TimeSeriesPanel;

pub use gbt::{GbtLoss, GbtParams};
pub use linear::LinearParams;
pub use mlp::MlpParams;
pub use naive::seasonal_naive;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("normal equations are singular (rank-deficient design without ridge)")]
    SingularSystem,
    #[error("feature rows do not match the model schema: {0}")]
    SchemaMismatch(String),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("history too short: need {needed} observations, have {available}")]
    HistoryTooShort { needed: usize, available: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training matrix is empty")]
    EmptyMatrix,
    #[error("{0} forecasts from the panel, not from feature rows")]
    NotRowBased(ModelFamily),
    #[error("model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    PooledLinear,
    Gbt,
    Mlp,
    SeasonalNaive,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::PooledLinear => "pooled_linear",
            ModelFamily::Gbt => "gbt",
            ModelFamily::Mlp => "mlp",
            ModelFamily::SeasonalNaive => "seasonal_naive",
        }
    }

    /// Machine-learning vs deep-learning grouping used in reports.
    pub fn class_label(self) -> &'static str {
        match self {
            ModelFamily::PooledLinear | ModelFamily::Gbt => "ML",
            ModelFamily::Mlp => "DL",
            ModelFamily::SeasonalNaive => "benchmark",
        }
    }

    pub fn uses_features(self) -> bool {
        self != ModelFamily::SeasonalNaive
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::PooledLinear, Self::Gbt, Self::Mlp, Self::SeasonalNaive]
            .into_iter()
            .find(|f| f.name() == s)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The fourteen probability levels evaluated by default.
pub const DEFAULT_QUANTILES: [f64; 14] = [
    0.005, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25, 0.75, 0.8, 0.85, 0.9, 0.95, 0.975, 0.995,
];

/// Strictly increasing probability levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self, ModelError> {
        if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(ModelError::InvalidParams("quantile levels must lie in (0, 1)".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidParams(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        Ok(Self(levels))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Column label of a level, e.g. `q0.05`.
    pub fn column_name(q: f64) -> String {
        format!("q{q}")
    }
}

impl Default for QuantileLevels {
    fn default() -> Self {
        Self(DEFAULT_QUANTILES.to_vec())
    }
}

impl TryFrom<Vec<f64>> for QuantileLevels {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<QuantileLevels> for Vec<f64> {
    fn from(q: QuantileLevels) -> Self {
        q.0
    }
}

/// Hyperparameters for every family; fixed per run, never tuned.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub pooled_linear: LinearParams,
    pub gbt: GbtParams,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    PooledLinear(linear::LinearModel),
    Gbt(gbt::GbtModel),
    Mlp(mlp::MlpModel),
    SeasonalNaive(naive::NaiveModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub family: ModelFamily,
    pub quantile_levels: QuantileLevels,
    /// Forecast origin (exclusive end of the training window) of the fit.
    pub fitted_at: usize,
    pub feature_schema: Vec<String>,
    pub target_transform: TargetTransform,
    pub rng_seed: Option<u64>,
    pub params: ModelParams,
}

/// One forecast: point plus a value per quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub point: f64,
    pub quantiles: Vec<f64>,
}

impl Prediction {
    /// Back-transforms, sorts the quantiles and clips everything at zero.
    pub fn finalize(point: f64, mut quantiles: Vec<f64>, transform: TargetTransform) -> Self {
        let clip = |v: f64| transform.inverse(v).max(0.0);
        quantiles.iter_mut().for_each(|q| *q = clip(*q));
        quantiles.sort_by(f64::total_cmp);
        Self {
            point: clip(point),
            quantiles,
        }
    }
}

fn wrap(
    matrix: &FeatureMatrix,
    family: ModelFamily,
    quantiles: &QuantileLevels,
    fitted_at: usize,
    seed: Option<u64>,
    params: ModelParams,
) -> GlobalModel {
    GlobalModel {
        family,
        quantile_levels: quantiles.clone(),
        fitted_at,
        feature_schema: matrix.columns.clone(),
        target_transform: matrix.target_transform,
        rng_seed: seed,
        params,
    }
}

pub fn fit_pooled_linear(
    matrix: &FeatureMatrix,
    params: &LinearParams,
    quantiles: &QuantileLevels,
    fitted_at: usize,
) -> Result<GlobalModel, ModelError> {
    let model = linear::fit(matrix, params, quantiles.as_slice())?;
    Ok(wrap(
        matrix,
        ModelFamily::PooledLinear,
        quantiles,
        fitted_at,
        None,
        ModelParams::PooledLinear(model),
    ))
}

pub fn fit_gbt(
    matrix: &FeatureMatrix,
    params: &GbtParams,
    quantiles: &QuantileLevels,
    fitted_at: usize,
) -> Result<GlobalModel, ModelError> {
    let model = gbt::fit(matrix, params, quantiles.as_slice())?;
    Ok(wrap(
        matrix,
        ModelFamily::Gbt,
        quantiles,
        fitted_at,
        None,
        ModelParams::Gbt(model),
    ))
}

pub fn fit_mlp(
    matrix: &FeatureMatrix,
    params: &MlpParams,
    quantiles: &QuantileLevels,
    fitted_at: usize,
) -> Result<GlobalModel, ModelError> {
    let model = mlp::fit(matrix, params, quantiles.as_slice())?;
    Ok(wrap(
        matrix,
        ModelFamily::Mlp,
        quantiles,
        fitted_at,
        Some(params.rng_seed),
        ModelParams::Mlp(model),
    ))
}

pub fn fit_seasonal_naive(
    panel: &TimeSeriesPanel,
    origin: usize,
    season: usize,
    quantiles: &QuantileLevels,
) -> Result<GlobalModel, ModelError> {
    let model = naive::fit(panel, origin, season, quantiles.as_slice())?;
    Ok(GlobalModel {
        family: ModelFamily::SeasonalNaive,
        quantile_levels: quantiles.clone(),
        fitted_at: origin,
        feature_schema: Vec::new(),
        target_transform: TargetTransform::None,
        rng_seed: None,
        params: ModelParams::SeasonalNaive(model),
    })
}

/// Fits a feature-based family on `matrix`.
pub fn fit_features(
    family: ModelFamily,
    spec: &ModelSpec,
    matrix: &FeatureMatrix,
    quantiles: &QuantileLevels,
    fitted_at: usize,
) -> Result<GlobalModel, ModelError> {
    match family {
        ModelFamily::PooledLinear => fit_pooled_linear(matrix, &spec.pooled_linear, quantiles, fitted_at),
        ModelFamily::Gbt => fit_gbt(matrix, &spec.gbt, quantiles, fitted_at),
        ModelFamily::Mlp => fit_mlp(matrix, &spec.mlp, quantiles, fitted_at),
        ModelFamily::SeasonalNaive => Err(ModelError::NotRowBased(family)),
    }
}

impl GlobalModel {
    /// Predicts every row of `data` (row-major, `columns.len()` wide).
    pub fn predict(&self, columns: &[String], data: &[f64]) -> Result<Vec<Prediction>, ModelError> {
        if columns != self.feature_schema.as_slice() {
            return Err(ModelError::SchemaMismatch(format!(
                "model expects {} columns [{}], got {} [{}]",
                self.feature_schema.len(),
                self.feature_schema.join(","),
                columns.len(),
                columns.join(",")
            )));
        }
        let d = columns.len();
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(ModelError::SchemaMismatch(format!(
                "{} values do not form rows of width {d}",
                data.len()
            )));
        }
        let tf = self.target_transform;
        let rows = data.chunks(d);
        let out = match &self.params {
            ModelParams::PooledLinear(m) => rows
                .map(|r| {
                    let qs = m.quantile_heads.iter().map(|h| h.predict(r)).collect();
                    Prediction::finalize(m.point.predict(r), qs, tf)
                })
                .collect(),
            ModelParams::Gbt(m) => rows
                .map(|r| {
                    let qs = m.quantile_heads.iter().map(|e| e.predict(r)).collect();
                    Prediction::finalize(m.point.predict(r), qs, tf)
                })
                .collect(),
            ModelParams::Mlp(m) => {
                let mut z = Vec::with_capacity(d);
                rows.map(|r| {
                    let mut out = m.predict_row(r, &mut z);
                    let point = out[0];
                    out.remove(0);
                    Prediction::finalize(point, out, tf)
                })
                .collect()
            }
            ModelParams::SeasonalNaive(_) => return Err(ModelError::NotRowBased(self.family)),
        };
        Ok(out)
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<Prediction>, ModelError> {
        self.predict(&matrix.columns, &matrix.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use linear::{LinearHead, LinearModel};

    fn linear_model(point: LinearHead, heads: Vec<LinearHead>, q: Vec<f64>) -> GlobalModel {
        GlobalModel {
            family: ModelFamily::PooledLinear,
            quantile_levels: QuantileLevels::new(q).unwrap(),
            fitted_at: 10,
            feature_schema: vec!["a".into(), "b".into()],
            target_transform: TargetTransform::None,
            rng_seed: None,
            params: ModelParams::PooledLinear(LinearModel {
                point,
                quantile_heads: heads,
            }),
        }
    }

    fn head(w: [f64; 2], b: f64) -> LinearHead {
        LinearHead {
            weights: w.to_vec(),
            intercept: b,
        }
    }

    #[test]
    fn linear_prediction_is_dot_product_plus_intercept() {
        let m = linear_model(head([2.0, -1.0], 0.5), vec![], vec![]);
        let cols = vec!["a".to_string(), "b".to_string()];
        let p = m.predict(&cols, &[3.0, 1.0]).unwrap();
        assert_eq!(p[0].point, 5.5);
    }

    #[test]
    fn crossing_quantiles_are_rearranged() {
        let m = linear_model(
            head([1.0, 0.0], 0.0),
            vec![head([0.0, 0.0], 9.0), head([0.0, 0.0], 4.0)],
            vec![0.25, 0.75],
        );
        let cols = vec!["a".to_string(), "b".to_string()];
        let p = m.predict(&cols, &[5.0, 0.0]).unwrap();
        assert_eq!(p[0].quantiles, vec![4.0, 9.0]);
    }

    #[test]
    fn negative_outputs_are_clipped() {
        let m = linear_model(head([0.0, 0.0], -0.3), vec![head([0.0, 0.0], -1.0)], vec![0.5]);
        let cols = vec!["a".to_string(), "b".to_string()];
        let p = m.predict(&cols, &[1.0, 1.0]).unwrap();
        assert_eq!(p[0].point, 0.0);
        assert_eq!(p[0].quantiles, vec![0.0]);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let m = linear_model(head([1.0, 1.0], 0.0), vec![], vec![]);
        let cols = vec!["b".to_string(), "a".to_string()];
        assert!(matches!(
            m.predict(&cols, &[1.0, 2.0]),
            Err(ModelError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn quantile_levels_are_validated() {
        assert!(QuantileLevels::new(vec![0.5, 0.25]).is_err());
        assert!(QuantileLevels::new(vec![0.0, 0.5]).is_err());
        assert_eq!(QuantileLevels::default().len(), 14);
        assert_eq!(QuantileLevels::column_name(0.05), "q0.05");
        assert_eq!(QuantileLevels::column_name(0.1), "q0.1");
    }

    #[test]
    fn log1p_outputs_are_back_transformed() {
        let p = Prediction::finalize(2.0f64.ln_1p(), vec![1.0f64.ln_1p()], TargetTransform::Log1p);
        assert!((p.point - 2.0).abs() < 1e-12);
        assert!((p.quantiles[0] - 1.0).abs() < 1e-12);
    }
}
