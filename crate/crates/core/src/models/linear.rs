//! Pooled ridge regression with pinball-loss quantile heads.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureMatrix;
use crate::stats::{empirical_quantile, pinball};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearParams {
    /// Ridge penalty on the non-intercept coefficients.
    pub ridge_lambda: f64,
    /// Subgradient steps per quantile head.
    pub quantile_iters: usize,
    /// Initial subgradient step, in units of the target standard deviation.
    pub quantile_step: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            ridge_lambda: 1.0,
            quantile_iters: 25,
            quantile_step: 0.1,
        }
    }
}

impl LinearParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(ModelError::InvalidParams(format!(
                "ridge_lambda must be finite and >= 0, got {}",
                self.ridge_lambda
            )));
        }
        if !(self.quantile_step > 0.0 && self.quantile_step.is_finite()) {
            return Err(ModelError::InvalidParams("quantile_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearHead {
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut acc = self.intercept;
        for (w, x) in self.weights.iter().zip(row) {
            acc += w * x;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub point: LinearHead,
    pub quantile_heads: Vec<LinearHead>,
}

/// In-place Cholesky factorisation of a symmetric `d x d` matrix; returns
/// `None` when a pivot is not safely positive.
fn cholesky(a: &mut [f64], d: usize) -> Option<()> {
    let max_diag = (0..d).map(|i| a[i * d + i]).fold(0.0f64, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE) * d as f64;
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag.is_nan() || diag <= tol {
            return None;
        }
        let diag = diag.sqrt();
        a[j * d + j] = diag;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / diag;
        }
    }
    Some(())
}

fn cholesky_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * d + k] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut v = b[i];
        for k in i + 1..d {
            v -= l[k * d + i] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
}

/// Ridge least squares with an unpenalised intercept, solved on centred data.
pub fn fit_ridge(matrix: &FeatureMatrix, lambda: f64) -> Result<LinearHead, ModelError> {
    let n = matrix.n_rows();
    let d = matrix.n_cols();
    if n == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ModelError::InvalidParams(format!(
            "ridge_lambda must be >= 0, got {lambda}"
        )));
    }
    let y_mean = matrix.target.iter().sum::<f64>() / n as f64;
    if d == 0 {
        return Ok(LinearHead {
            weights: Vec::new(),
            intercept: y_mean,
        });
    }
    let mut x_mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in x_mean.iter_mut().zip(matrix.row(i)) {
            *m += x;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut centred = vec![0.0; d];
    for i in 0..n {
        for ((c, x), m) in centred.iter_mut().zip(matrix.row(i)).zip(&x_mean) {
            *c = x - m;
        }
        let yc = matrix.target[i] - y_mean;
        for a in 0..d {
            let ca = centred[a];
            if ca == 0.0 {
                continue;
            }
            rhs[a] += ca * yc;
            let row = &mut gram[a * d..a * d + a + 1];
            for (g, cb) in row.iter_mut().zip(&centred[..=a]) {
                *g += ca * cb;
            }
        }
    }
    for a in 0..d {
        gram[a * d + a] += lambda;
        for b in 0..a {
            gram[b * d + a] = gram[a * d + b];
        }
    }
    if cholesky(&mut gram, d).is_none() {
        return Err(ModelError::SingularSystem);
    }
    cholesky_solve(&gram, d, &mut rhs);
    let intercept = y_mean - rhs.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearHead {
        weights: rhs,
        intercept,
    })
}

/// Starts from the ridge fit shifted by the residual quantile, then refines
/// by subgradient descent on the mean pinball loss in standardised
/// coordinates. The best iterate seen is kept.
#[allow(clippy::too_many_arguments)]
fn fit_quantile_head(
    matrix: &FeatureMatrix,
    base: &LinearHead,
    residuals: &[f64],
    q: f64,
    params: &LinearParams,
    scales: &[f64],
    means: &[f64],
    y_scale: f64,
) -> LinearHead {
    let n = matrix.n_rows();
    let d = matrix.n_cols();
    let mut sorted = residuals.to_vec();
    let shift = empirical_quantile(&mut sorted, q);

    // Standardised parameters: f = c + sum_j v_j * (x_j - mean_j) / scale_j.
    let mut v: Vec<f64> = base.weights.iter().zip(scales).map(|(w, s)| w * s).collect();
    let mut c = base.intercept + shift + base.weights.iter().zip(means).map(|(w, m)| w * m).sum::<f64>();
    let mut best = (f64::INFINITY, v.clone(), c);
    let mut grad = vec![0.0; d];
    let mut z = vec![0.0; d];

    for iter in 0..=params.quantile_iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_c = 0.0;
        let mut loss = 0.0;
        for i in 0..n {
            let row = matrix.row(i);
            let mut f = c;
            for j in 0..d {
                z[j] = (row[j] - means[j]) / scales[j];
                f += v[j] * z[j];
            }
            let y = matrix.target[i];
            loss += pinball(y, f, q);
            let g = if y >= f { -q } else { 1.0 - q };
            grad_c += g;
            for j in 0..d {
                grad[j] += g * z[j];
            }
        }
        if loss < best.0 {
            best = (loss, v.clone(), c);
        }
        if iter == params.quantile_iters {
            break;
        }
        let step = params.quantile_step * y_scale / ((iter + 1) as f64).sqrt() / n as f64;
        c -= step * grad_c;
        for j in 0..d {
            v[j] -= step * grad[j];
        }
    }

    let (_, v, c) = best;
    let weights: Vec<f64> = v.iter().zip(scales).map(|(v, s)| v / s).collect();
    let intercept = c - weights.iter().zip(means).map(|(w, m)| w * m).sum::<f64>();
    LinearHead { weights, intercept }
}

pub fn fit(matrix: &FeatureMatrix, params: &LinearParams, quantiles: &[f64]) -> Result<LinearModel, ModelError> {
    params.validate()?;
    let point = fit_ridge(matrix, params.ridge_lambda)?;
    let n = matrix.n_rows();
    let d = matrix.n_cols();
    let residuals: Vec<f64> = (0..n)
        .map(|i| matrix.target[i] - point.predict(matrix.row(i)))
        .collect();

    let mut means = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..n {
        for (j, x) in matrix.row(i).iter().enumerate() {
            means[j] += x;
            sq[j] += x * x;
        }
    }
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            means[j] /= n as f64;
            let var = (sq[j] / n as f64 - means[j] * means[j]).max(0.0);
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let y_mean = matrix.target.iter().sum::<f64>() / n as f64;
    let y_var = matrix.target.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if y_var > 0.0 { y_var.sqrt() } else { 1.0 };

    let quantile_heads = quantiles
        .iter()
        .map(|&q| fit_quantile_head(matrix, &point, &residuals, q, params, &scales, &means, y_scale))
        .collect();
    Ok(LinearModel { point, quantile_heads })
}
