//! Multinomial logistic regression fitted by full-batch gradient descent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, PowersetClass, N_CLASSES};
use crate::error::{CetError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogregParams {
    /// Inverse regularization strength; the penalty is ‖W‖²/(2C).
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm drops below this.
    pub tol: f64,
}

impl Default for LogregParams {
    fn default() -> Self {
        LogregParams {
            c: 100.0,
            max_iter: 5000,
            tol: 1e-5,
        }
    }
}

/// Weights are stored row-major as 16 × d, followed by nothing else; the
/// bias is kept separately and is never penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub iterations: usize,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights.len() / N_CLASSES
    }

    fn scores(&self, row: &[f64]) -> [f64; N_CLASSES] {
        scores_of(&self.weights, &self.bias, row)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), N_CLASSES);
        for i in 0..x.rows() {
            let mut s = self.scores(x.row(i));
            softmax_in_place(&mut s);
            out.row_mut(i).copy_from_slice(&s);
        }
        out
    }
}

fn scores_of(weights: &[f64], bias: &[f64], row: &[f64]) -> [f64; N_CLASSES] {
    let d = row.len();
    let mut s = [0.0; N_CLASSES];
    for (k, sk) in s.iter_mut().enumerate() {
        let wk = &weights[k * d..(k + 1) * d];
        *sk = bias[k] + wk.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

const CHUNK: usize = 512;

/// Objective and gradient at `theta` = weights (16·d) followed by bias (16).
///
/// The objective is the mean weighted cross-entropy plus ‖W‖²/(2C). Rows
/// are processed in fixed chunks whose partial sums are added in order, so
/// the result does not depend on the thread count.
pub fn loss_and_grad(theta: &[f64], x: &Matrix, y: &[PowersetClass], w: &[f64], c: f64) -> (f64, Vec<f64>) {
    let d = x.cols();
    let nw = N_CLASSES * d;
    let n = x.rows();
    let (weights, bias) = theta.split_at(nw);
    let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut loss = 0.0;
            let mut g = vec![0.0; nw + N_CLASSES];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let row = x.row(i);
                let mut p = scores_of(weights, bias, row);
                softmax_in_place(&mut p);
                let yi = y[i].id();
                loss -= w[i] * p[yi].max(f64::MIN_POSITIVE).ln();
                for k in 0..N_CLASSES {
                    let r = w[i] * (p[k] - if k == yi { 1.0 } else { 0.0 });
                    if r != 0.0 {
                        for (gj, xj) in g[k * d..(k + 1) * d].iter_mut().zip(row) {
                            *gj += r * xj;
                        }
                        g[nw + k] += r;
                    }
                }
            }
            (loss, g)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; nw + N_CLASSES];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    grad.iter_mut().for_each(|v| *v *= inv_n);
    let mut penalty = 0.0;
    for (g, wk) in grad[..nw].iter_mut().zip(weights) {
        penalty += wk * wk;
        *g += wk / c;
    }
    (loss + 0.5 * penalty / c, grad)
}

/// Fit from zero initialization with backtracking (Armijo) step sizes.
/// Returns the model and the objective at every accepted iterate,
/// starting with the initial one.
pub fn fit_logreg(
    x: &Matrix,
    y: &[PowersetClass],
    w: &[f64],
    params: &LogregParams,
) -> Result<(LinearModel, Vec<f64>)> {
    let n = x.rows();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(CetError::LengthMismatch(
            "logistic regression training data".into(),
        ));
    }
    if params.c.is_nan() || params.c <= 0.0 {
        return Err(CetError::Config(format!("C must be positive, got {}", params.c)));
    }
    let d = x.cols();
    let mut theta = vec![0.0; N_CLASSES * d + N_CLASSES];
    let (mut f, mut g) = loss_and_grad(&theta, x, y, w, params.c);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;

    while iterations < params.max_iter {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < params.tol {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let (fc, gc) = loss_and_grad(&cand, x, y, w, params.c);
            if fc <= f - 0.5 * step * gnorm2 {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // No representable step decreases the objective.
            break;
        };
        if !fc.is_finite() {
            return Err(CetError::NonFinite("logistic regression loss"));
        }
        theta = cand;
        f = fc;
        g = gc;
        history.push(f);
        iterations += 1;
        step *= 2.0;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(CetError::NonFinite("logistic regression weights"));
    }
    let bias = theta.split_off(N_CLASSES * d);
    Ok((
        LinearModel {
            weights: theta,
            bias,
            iterations,
        },
        history,
    ))
}

pub fn train_logreg(
    x: &Matrix,
    y: &[PowersetClass],
    w: &[f64],
    params: &LogregParams,
) -> Result<LinearModel> {
    fit_logreg(x, y, w, params).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::argmax_class;

    #[test]
    fn separable_2d() {
        let rows: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                [s * (1.0 + (i as f64) * 0.05), (i as f64 * 0.37).sin()]
            })
            .collect();
        let y: Vec<_> = (0..40)
            .map(|i| PowersetClass::new(if i % 2 == 0 { 4 } else { 1 }).unwrap())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = train_logreg(&x, &y, &[1.0; 40], &LogregParams::default()).unwrap();
        let p = m.predict_proba(&x);
        for (i, yi) in y.iter().enumerate() {
            assert_eq!(argmax_class(p.row(i)), *yi);
        }
    }

    #[test]
    fn objective_never_increases() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.5], [2.0, -1.0], [0.5, 0.5]]).unwrap();
        let y: Vec<_> = [0, 3, 3, 0]
            .iter()
            .map(|c| PowersetClass::new(*c).unwrap())
            .collect();
        let params = LogregParams {
            max_iter: 200,
            ..Default::default()
        };
        let (_, hist) = fit_logreg(&x, &y, &[1.0, 2.0, 1.0, 0.5], &params).unwrap();
        assert!(hist.windows(2).all(|p| p[1] <= p[0]));
        assert!((hist[0] - 16f64.ln() * 4.5 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_probability_grows() {
        let x = Matrix::from_rows(&[[0.1], [0.4], [-0.3]]).unwrap();
        let y = vec![PowersetClass::new(6).unwrap(); 3];
        let short = LogregParams {
            max_iter: 5,
            ..Default::default()
        };
        let a = train_logreg(&x, &y, &[1.0; 3], &short).unwrap();
        let b = train_logreg(&x, &y, &[1.0; 3], &LogregParams::default()).unwrap();
        let pa = a.predict_proba(&x).get(0, 6);
        let pb = b.predict_proba(&x).get(0, 6);
        assert!(pb > pa && pb > 0.99);
    }
}
