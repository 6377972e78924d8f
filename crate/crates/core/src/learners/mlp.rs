//! Fully connected ReLU network with a softmax output, trained with Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, PowersetClass, N_CLASSES};
use crate::error::{CetError, Result};
use crate::matrix::Matrix;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_dim: 128,
            num_hidden_layers: 2,
            lr: 0.001,
            batch_size: 32,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Layer widths `dims = [d, h, .., h, 16]` and every parameter in one flat
/// vector: for each layer its `out × in` weights (row-major), then its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
}

pub fn layer_dims(d: usize, params: &MlpParams) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend(std::iter::repeat_n(params.hidden_dim, params.num_hidden_layers));
    dims.push(N_CLASSES);
    dims
}

pub fn n_params(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Offsets of each layer's weights and biases in the flat vector.
fn offsets(dims: &[usize]) -> Vec<(usize, usize)> {
    let mut at = 0;
    dims.windows(2)
        .map(|w| {
            let wo = at;
            at += w[0] * w[1];
            let bo = at;
            at += w[1];
            (wo, bo)
        })
        .collect()
}

/// Activations of every layer for one row; the last entry is the raw
/// output scores (pre-softmax).
fn forward(dims: &[usize], theta: &[f64], offs: &[(usize, usize)], row: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![row.to_vec()];
    let last = dims.len() - 2;
    for (l, w) in dims.windows(2).enumerate() {
        let (din, dout) = (w[0], w[1]);
        let (wo, bo) = offs[l];
        let input = &acts[l];
        let mut out = vec![0.0; dout];
        for (o, v) in out.iter_mut().enumerate() {
            let wr = &theta[wo + o * din..wo + (o + 1) * din];
            let z = theta[bo + o] + wr.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            *v = if l < last { z.max(0.0) } else { z };
        }
        acts.push(out);
    }
    acts
}

/// Mean weighted cross-entropy over `rows` and its gradient w.r.t. `theta`.
pub fn loss_and_grad(
    dims: &[usize],
    theta: &[f64],
    x: &Matrix,
    rows: &[usize],
    y: &[PowersetClass],
    w: &[f64],
) -> (f64, Vec<f64>) {
    let offs = offsets(dims);
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let n_layers = dims.len() - 1;
    for &i in rows {
        let acts = forward(dims, theta, &offs, x.row(i));
        let mut p = acts[n_layers].clone();
        softmax_in_place(&mut p);
        let yi = y[i].id();
        loss -= w[i] * p[yi].max(f64::MIN_POSITIVE).ln();
        let mut delta: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, pk)| w[i] * (pk - if k == yi { 1.0 } else { 0.0 }))
            .collect();
        for l in (0..n_layers).rev() {
            let (din, dout) = (dims[l], dims[l + 1]);
            let (wo, bo) = offs[l];
            let input = &acts[l];
            for o in 0..dout {
                let dz = delta[o];
                if dz == 0.0 {
                    continue;
                }
                grad[bo + o] += dz;
                for (g, a) in grad[wo + o * din..wo + (o + 1) * din].iter_mut().zip(input) {
                    *g += dz * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; din];
                for o in 0..dout {
                    let dz = delta[o];
                    if dz == 0.0 {
                        continue;
                    }
                    for (pj, wj) in prev.iter_mut().zip(&theta[wo + o * din..wo + (o + 1) * din]) {
                        *pj += dz * wj;
                    }
                }
                // ReLU derivative, taken as 0 at 0.
                for (pj, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *pj = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    let inv = 1.0 / rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss * inv, grad)
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.dims[0]
    }

    /// Uniform He initialization, `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(d: usize, params: &MlpParams, seed: u64) -> Self {
        let dims = layer_dims(d, params);
        let mut theta = vec![0.0; n_params(&dims)];
        let mut rng = rng_for(seed, "mlp-init", 0);
        for (l, (wo, _)) in offsets(&dims).into_iter().enumerate() {
            let (din, dout) = (dims[l], dims[l + 1]);
            let bound = (6.0 / din.max(1) as f64).sqrt();
            for v in &mut theta[wo..wo + din * dout] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        MlpModel { dims, params: theta }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let offs = offsets(&self.dims);
        let mut out = Matrix::zeros(x.rows(), N_CLASSES);
        for i in 0..x.rows() {
            let mut acts = forward(&self.dims, &self.params, &offs, x.row(i));
            let p = acts.last_mut().expect("at least one layer");
            softmax_in_place(p);
            out.row_mut(i).copy_from_slice(p);
        }
        out
    }
}

fn full_loss(model: &MlpModel, x: &Matrix, y: &[PowersetClass], w: &[f64]) -> f64 {
    let p = model.predict_proba(x);
    (0..x.rows())
        .map(|i| -w[i] * p.get(i, y[i].id()).max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / x.rows() as f64
}

/// Train and also return the full-data objective before training and
/// after each epoch.
pub fn fit_mlp(
    x: &Matrix,
    y: &[PowersetClass],
    w: &[f64],
    params: &MlpParams,
    seed: u64,
) -> Result<(MlpModel, Vec<f64>)> {
    let n = x.rows();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(CetError::LengthMismatch("network training data".into()));
    }
    if params.batch_size == 0 {
        return Err(CetError::Config("batch_size must be positive".into()));
    }
    let mut model = MlpModel::init(x.cols(), params, seed);
    let mut m = vec![0.0; model.params.len()];
    let mut v = vec![0.0; model.params.len()];
    let mut t = 0i32;
    let mut history = vec![full_loss(&model, x, y, w)];
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng_for(seed, "mlp-shuffle", epoch as u64));
        for batch in order.chunks(params.batch_size) {
            let (_, g) = loss_and_grad(&model.dims, &model.params, x, batch, y, w);
            t += 1;
            let c1 = 1.0 - params.beta1.powi(t);
            let c2 = 1.0 - params.beta2.powi(t);
            for j in 0..g.len() {
                m[j] = params.beta1 * m[j] + (1.0 - params.beta1) * g[j];
                v[j] = params.beta2 * v[j] + (1.0 - params.beta2) * g[j] * g[j];
                model.params[j] -= params.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + params.eps);
            }
        }
        let loss = full_loss(&model, x, y, w);
        if !loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(CetError::NonFinite("network training"));
        }
        history.push(loss);
    }
    Ok((model, history))
}

pub fn train_mlp(
    x: &Matrix,
    y: &[PowersetClass],
    w: &[f64],
    params: &MlpParams,
    seed: u64,
) -> Result<MlpModel> {
    fit_mlp(x, y, w, params, seed).map(|(m, _)| m)
}
