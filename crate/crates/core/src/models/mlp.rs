//! Feed-forward network with one point output and one output per quantile.
//!
//! Inputs and the target are standardised with training-window statistics.
//! Hidden layers use ReLU; the output layer is linear. The training loss per
//! row is `(y - point)^2 + mean_q pinball_q(y, out_q)` on the standardised
//! scale, minimised with Adam over shuffled mini-batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureMatrix;
use crate::stats::{empirical_quantile, pinball};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpParams {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32, 16],
            epochs: 10,
            batch_size: 256,
            learning_rate: 3e-3,
            rng_seed: 42,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(ModelError::InvalidParams(
                "hidden_sizes must be non-empty and positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidParams("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidParams("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The raw network: layer stack plus the quantile levels of its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub quantiles: Vec<f64>,
}

impl Network {
    /// Layer sizes `n_in -> hidden... -> 1 + |quantiles|`, Glorot-uniform
    /// weights with a down-scaled output layer and zero biases.
    pub fn init(n_in: usize, hidden: &[usize], quantiles: &[f64], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(1 + quantiles.len());
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let mut limit = (6.0 / (n_in + n_out) as f64).sqrt();
                if l + 1 == n_layers {
                    limit *= 0.1;
                }
                Dense {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        Self {
            layers,
            quantiles: quantiles.to_vec(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }

    /// Forward pass keeping every layer's activations (`acts[0]` is the input).
    fn forward_trace(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            for o in 0..layer.n_out {
                let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                let mut z = layer.bias[o];
                for (wi, xi) in w.iter().zip(input) {
                    z += wi * xi;
                }
                out.push(if l < last { z.max(0.0) } else { z });
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward_trace(x, &mut acts);
        acts.pop().expect("at least one layer")
    }

    fn row_loss(&self, out: &[f64], y: f64, dout: Option<&mut [f64]>) -> f64 {
        let nq = self.quantiles.len();
        let e = out[0] - y;
        let mut loss = e * e;
        let qw = if nq > 0 { 1.0 / nq as f64 } else { 0.0 };
        for (k, &q) in self.quantiles.iter().enumerate() {
            loss += qw * pinball(y, out[1 + k], q);
        }
        if let Some(d) = dout {
            d[0] = 2.0 * e;
            for (k, &q) in self.quantiles.iter().enumerate() {
                d[1 + k] = qw * if y >= out[1 + k] { -q } else { 1.0 - q };
            }
        }
        loss
    }

    /// Mean loss over the rows of `xs` (row-major, `n_in` wide) and its
    /// gradient with respect to [`Network::params`].
    pub fn loss_and_gradient(&self, xs: &[f64], ys: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n_params()];
        let mut scratch = Scratch::default();
        let loss = self.accumulate(xs, ys, &mut grad, &mut scratch);
        (loss, grad)
    }

    pub fn loss(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let n_in = self.layers[0].n_in;
        let mut total = 0.0;
        for (x, &y) in xs.chunks(n_in).zip(ys) {
            total += self.row_loss(&self.forward(x), y, None);
        }
        total / ys.len() as f64
    }

    fn accumulate(&self, xs: &[f64], ys: &[f64], grad: &mut [f64], s: &mut Scratch) -> f64 {
        let n_in = self.layers[0].n_in;
        let n = ys.len();
        let scale = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |k, l| {
                let start = *k;
                *k += l.weights.len() + l.bias.len();
                Some(start)
            })
            .collect();
        let mut total = 0.0;
        for (x, &y) in xs.chunks(n_in).zip(ys) {
            self.forward_trace(x, &mut s.acts);
            let out = s.acts.last().expect("output");
            s.delta.clear();
            s.delta.resize(out.len(), 0.0);
            total += self.row_loss(out, y, Some(&mut s.delta));
            for (l, layer) in self.layers.iter().enumerate().rev() {
                let input = &s.acts[l];
                let base = offsets[l];
                let (gw, gb) =
                    grad[base..base + layer.weights.len() + layer.bias.len()].split_at_mut(layer.weights.len());
                for o in 0..layer.n_out {
                    let d = s.delta[o] * scale;
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xi) in gw[o * layer.n_in..(o + 1) * layer.n_in].iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                if l == 0 {
                    break;
                }
                s.next.clear();
                s.next.resize(layer.n_in, 0.0);
                for o in 0..layer.n_out {
                    let d = s.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (nx, w) in s
                        .next
                        .iter_mut()
                        .zip(&layer.weights[o * layer.n_in..(o + 1) * layer.n_in])
                    {
                        *nx += d * w;
                    }
                }
                // ReLU derivative of the previous layer's output.
                for (nx, a) in s.next.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *nx = 0.0;
                    }
                }
                std::mem::swap(&mut s.delta, &mut s.next);
            }
        }
        total * scale
    }
}

#[derive(Default)]
struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub network: Network,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl MlpModel {
    /// Returns `[point, q_1, ..., q_k]` on the target scale.
    pub fn predict_row(&self, row: &[f64], z: &mut Vec<f64>) -> Vec<f64> {
        z.clear();
        z.extend(
            row.iter()
                .zip(&self.x_mean)
                .zip(&self.x_scale)
                .map(|((x, m), s)| (x - m) / s),
        );
        self.network
            .forward(z)
            .into_iter()
            .map(|o| self.y_mean + self.y_scale * o)
            .collect()
    }
}

fn standardise(matrix: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = matrix.n_rows() as f64;
    let d = matrix.n_cols();
    let mut mean = vec![0.0; d];
    for i in 0..matrix.n_rows() {
        for (m, x) in mean.iter_mut().zip(matrix.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for i in 0..matrix.n_rows() {
        for ((v, x), m) in var.iter_mut().zip(matrix.row(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Builds the initial model: standardisation statistics plus a network whose
/// quantile output biases start at the standardised empirical quantiles.
pub fn initial_model(matrix: &FeatureMatrix, params: &MlpParams, quantiles: &[f64]) -> Result<MlpModel, ModelError> {
    params.validate()?;
    let n = matrix.n_rows();
    if n == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    let (x_mean, x_scale) = standardise(matrix);
    let y_mean = matrix.target.iter().sum::<f64>() / n as f64;
    let y_var = matrix.target.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if y_var.sqrt() > 1e-12 { y_var.sqrt() } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut network = Network::init(matrix.n_cols(), &params.hidden_sizes, quantiles, &mut rng);
    let mut sorted = matrix.target.clone();
    sorted.sort_by(f64::total_cmp);
    let out = network.layers.last_mut().expect("output layer");
    for (k, &q) in quantiles.iter().enumerate() {
        out.bias[1 + k] = (empirical_quantile(&mut sorted, q) - y_mean) / y_scale;
    }
    Ok(MlpModel {
        network,
        x_mean,
        x_scale,
        y_mean,
        y_scale,
    })
}

pub fn fit(matrix: &FeatureMatrix, params: &MlpParams, quantiles: &[f64]) -> Result<MlpModel, ModelError> {
    let mut model = initial_model(matrix, params, quantiles)?;
    let n = matrix.n_rows();
    let d = matrix.n_cols();
    let mut xs = vec![0.0; n * d];
    for i in 0..n {
        for (j, x) in matrix.row(i).iter().enumerate() {
            xs[i * d + j] = (x - model.x_mean[j]) / model.x_scale[j];
        }
    }
    let ys: Vec<f64> = matrix
        .target
        .iter()
        .map(|y| (y - model.y_mean) / model.y_scale)
        .collect();

    // Shuffling uses a stream independent of the initialisation draws.
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    let mut theta = model.network.params();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut grad = vec![0.0; theta.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut bx = Vec::with_capacity(params.batch_size * d);
    let mut by = Vec::with_capacity(params.batch_size);
    let mut scratch = Scratch::default();

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(params.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&xs[i * d..(i + 1) * d]);
                by.push(ys[i]);
            }
            let loss = model.network.accumulate(&bx, &by, &mut grad, &mut scratch);
            if !loss.is_finite() {
                return Err(ModelError::DivergedTraining { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            step += 1;
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                theta[k] -= params.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
            model.network.set_params(&theta);
        }
        let epoch_loss = epoch_loss / n as f64;
        if !epoch_loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::DivergedTraining {
                epoch,
                loss: epoch_loss,
            });
        }
        log::trace!("mlp epoch {epoch}: loss {epoch_loss:.6}");
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| r.iter().sum::<f64>() + rng.random_range(-0.5..0.5))
            .collect();
        FeatureMatrix::from_rows((0..d).map(|j| format!("x{j}")).collect(), &rows, y)
    }

    fn finite_difference_max_rel_error(net: &mut Network, xs: &[f64], ys: &[f64]) -> f64 {
        let (_, analytic) = net.loss_and_gradient(xs, ys);
        let theta = net.params();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for k in 0..theta.len() {
            let mut p = theta.clone();
            p[k] += h;
            net.set_params(&p);
            let up = net.loss(xs, ys);
            p[k] -= 2.0 * h;
            net.set_params(&p);
            let down = net.loss(xs, ys);
            net.set_params(&theta);
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs());
            if denom > 1e-8 {
                worst = worst.max((analytic[k] - numeric).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn five_weight_net_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // 2 inputs -> 1 hidden -> 1 output: 2 + 1 + 1 + 1 = 5 parameters.
        let mut net = Network::init(2, &[1], &[], &mut rng);
        assert_eq!(net.n_params(), 5);
        net.set_params(&[0.7, -0.4, 0.3, 1.3, -0.2]);
        let xs = [0.5, 1.0, -1.0, 2.0, 1.5, -0.3];
        let ys = [0.2, -0.7, 1.1];
        assert!(finite_difference_max_rel_error(&mut net, &xs, &ys) < 1e-4);
    }

    #[test]
    fn quantile_net_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::init(3, &[4, 3], &[0.1, 0.5, 0.9], &mut rng);
        // Random biases keep pre-activations away from the ReLU kink at zero.
        let theta: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_params(&theta);
        let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(finite_difference_max_rel_error(&mut net, &xs, &ys) < 1e-4);
    }

    #[test]
    fn zero_epochs_leaves_initialisation() {
        let m = toy(50, 3, 3);
        let params = MlpParams {
            epochs: 0,
            ..Default::default()
        };
        let init = initial_model(&m, &params, &[0.5]).unwrap();
        let fitted = fit(&m, &params, &[0.5]).unwrap();
        assert_eq!(init, fitted);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let m = toy(300, 4, 4);
        let params = MlpParams {
            epochs: 30,
            batch_size: 32,
            ..Default::default()
        };
        let a = fit(&m, &params, &[0.1, 0.9]).unwrap();
        let b = fit(&m, &params, &[0.1, 0.9]).unwrap();
        assert_eq!(a, b);
        let init = initial_model(&m, &params, &[0.1, 0.9]).unwrap();
        let standardised = |model: &MlpModel| {
            let mut xs = Vec::new();
            for i in 0..m.n_rows() {
                xs.extend(
                    m.row(i)
                        .iter()
                        .enumerate()
                        .map(|(j, x)| (x - model.x_mean[j]) / model.x_scale[j]),
                );
            }
            let ys: Vec<f64> = m.target.iter().map(|y| (y - model.y_mean) / model.y_scale).collect();
            model.network.loss(&xs, &ys)
        };
        assert!(standardised(&a) < 0.5 * standardised(&init));
    }

    #[test]
    fn constant_target_is_learned() {
        let mut m = toy(1000, 3, 5);
        m.target.iter_mut().for_each(|y| *y = 6.0);
        let model = fit(&m, &MlpParams::default(), &[0.25, 0.75]).unwrap();
        let mut z = Vec::new();
        for i in (0..1000).step_by(97) {
            let out = model.predict_row(m.row(i), &mut z);
            assert!((out[0] - 6.0).abs() < 0.06, "{}", out[0]);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let m = toy(10, 2, 6);
        let params = MlpParams {
            hidden_sizes: vec![],
            ..Default::default()
        };
        assert!(matches!(fit(&m, &params, &[]), Err(ModelError::InvalidParams(_))));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut m = toy(64, 2, 7);
        m.target[3] = f64::NAN;
        let err = fit(&m, &MlpParams::default(), &[]).unwrap_err();
        assert!(matches!(err, ModelError::DivergedTraining { .. }), "{err}");
    }
}
