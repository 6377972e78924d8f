//! Multiclass gradient boosting with softmax loss: one regression tree per
//! class per round, Newton leaf values, row subsampling without replacement.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{partition_rows, BinnedMatrix, Node, Tree};
use super::{softmax_in_place, PowersetClass, N_CLASSES};
use crate::error::{CetError, Result};
use crate::matrix::Matrix;
use crate::seed::rng_for;

/// Lower bound on a leaf's Newton denominator.
pub const HESSIAN_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    /// L2 penalty on leaf values (added to the hessian sum).
    pub reg_lambda: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 200,
            max_depth: 8,
            learning_rate: 0.1,
            subsample: 0.8,
            reg_lambda: 1.0,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// `rounds[r][k]` is the tree for class `k` fitted in round `r`.
    pub rounds: Vec<Vec<Tree<f64>>>,
    pub learning_rate: f64,
    pub subsample: f64,
    pub n_features: usize,
}

impl BoostedModel {
    pub fn raw_scores(&self, row: &[f64]) -> [f64; N_CLASSES] {
        let mut s = [0.0; N_CLASSES];
        for round in &self.rounds {
            for (k, tree) in round.iter().enumerate() {
                s[k] += self.learning_rate * tree.leaf_for(row);
            }
        }
        s
    }

    /// Tree-major evaluation: each tree is walked for every row while it is
    /// hot in cache. Per row the additions happen in the same order as in
    /// [`BoostedModel::raw_scores`], so the results are identical.
    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let mut out = Matrix::zeros(n, N_CLASSES);
        for round in &self.rounds {
            for (k, tree) in round.iter().enumerate() {
                for i in 0..n {
                    let v = self.learning_rate * tree.leaf_for(x.row(i));
                    out.row_mut(i)[k] += v;
                }
            }
        }
        for i in 0..n {
            softmax_in_place(out.row_mut(i));
        }
        out
    }
}

struct RegressionGrower<'a> {
    x: &'a BinnedMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbtParams,
}

impl RegressionGrower<'_> {
    fn sums(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]))
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        g / (h + self.params.reg_lambda).max(HESSIAN_FLOOR)
    }

    fn gain_term(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.reg_lambda).max(HESSIAN_FLOOR)
    }

    fn best_split(&self, rows: &[usize], g: f64, h: f64) -> Option<(usize, u8)> {
        let min_leaf = self.params.min_samples_leaf.max(1);
        let parent = self.gain_term(g, h);
        let mut best: Option<(f64, usize, u8)> = None;
        let mut hist: Vec<(f64, f64, usize)> = Vec::new();
        for f in 0..self.x.cols {
            let nb = self.x.n_bins(f);
            if nb < 2 {
                continue;
            }
            hist.clear();
            hist.resize(nb, (0.0, 0.0, 0));
            let col = self.x.column(f);
            for &i in rows {
                let e = &mut hist[col[i] as usize];
                e.0 += self.grad[i];
                e.1 += self.hess[i];
                e.2 += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for (b, e) in hist.iter().enumerate().take(nb - 1) {
                if e.2 == 0 {
                    continue;
                }
                gl += e.0;
                hl += e.1;
                nl += e.2;
                let nr = rows.len() - nl;
                if nr == 0 {
                    break;
                }
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let gain = self.gain_term(gl, hl) + self.gain_term(g - gl, h - hl) - parent;
                if gain > 1e-12 && best.is_none_or(|(s, _, _)| gain > s) {
                    best = Some((gain, f, b as u8));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&self, mut rows: Vec<usize>) -> Tree<f64> {
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
        while let Some((slot, start, end, depth)) = stack.pop() {
            let part = &mut rows[start..end];
            let (g, h) = self.sums(part);
            let split =
                if depth >= self.params.max_depth || part.len() < 2 * self.params.min_samples_leaf.max(1) {
                    None
                } else {
                    self.best_split(part, g, h)
                };
            match split {
                None => nodes[slot] = Node::Leaf(self.leaf_value(g, h)),
                Some((feature, bin)) => {
                    let l = partition_rows(part, self.x.column(feature), bin);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[slot] = Node::Split {
                        feature,
                        threshold: self.x.edges[feature][bin as usize],
                        bin,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, start + l, end, depth + 1));
                    stack.push((left, start, start + l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }
}

/// Weighted mean softmax cross-entropy of raw class scores.
pub fn softmax_loss(scores: &[[f64; N_CLASSES]], y: &[PowersetClass], w: &[f64]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(y.iter().zip(w))
        .map(|(s, (c, wi))| {
            let mut p = *s;
            softmax_in_place(&mut p);
            -wi * p[c.id()].max(f64::MIN_POSITIVE).ln()
        })
        .sum::<f64>()
        / n
}

pub fn train_gbt(
    x: &Matrix,
    y: &[PowersetClass],
    w: &[f64],
    params: &GbtParams,
    seed: u64,
) -> Result<BoostedModel> {
    let n = x.rows();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(CetError::LengthMismatch("boosting training data".into()));
    }
    let binned = BinnedMatrix::fit(x);
    let mut scores = vec![[0.0f64; N_CLASSES]; n];
    let mut rounds = Vec::with_capacity(params.n_estimators);
    let take = ((params.subsample.clamp(0.0, 1.0) * n as f64).floor() as usize).clamp(1, n);

    for r in 0..params.n_estimators {
        let proba: Vec<[f64; N_CLASSES]> = scores
            .par_iter()
            .map(|s| {
                let mut p = *s;
                softmax_in_place(&mut p);
                p
            })
            .collect();
        let rows: Vec<usize> = if take < n {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng_for(seed, "gbt", r as u64));
            let mut chosen = all[..take].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            (0..n).collect()
        };

        let trees: Vec<Tree<f64>> = (0..N_CLASSES)
            .into_par_iter()
            .map(|k| {
                let mut grad = vec![0.0; n];
                let mut hess = vec![0.0; n];
                for &i in &rows {
                    let p = proba[i][k];
                    let target = if y[i].id() == k { 1.0 } else { 0.0 };
                    grad[i] = w[i] * (target - p);
                    hess[i] = w[i] * p * (1.0 - p);
                }
                RegressionGrower {
                    x: &binned,
                    grad: &grad,
                    hess: &hess,
                    params,
                }
                .grow(rows.clone())
            })
            .collect();

        scores.par_iter_mut().enumerate().for_each(|(i, s)| {
            for (k, tree) in trees.iter().enumerate() {
                s[k] += params.learning_rate * tree.leaf_for_binned(&binned, i);
            }
        });
        if scores.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(CetError::NonFinite("boosting scores"));
        }
        rounds.push(trees);
    }

    Ok(BoostedModel {
        rounds,
        learning_rate: params.learning_rate,
        subsample: params.subsample,
        n_features: x.cols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize) -> (Matrix, Vec<PowersetClass>) {
        let mut rng = rng_for(5, "blobs", 0);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = (i % 3) as u32;
            rows.push([c as f64 + rng.gen_range(-0.7..0.7), rng.gen_range(0.0..1.0)]);
            y.push(PowersetClass::new(c * 5).unwrap());
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn first_round_reduces_loss() {
        let (x, y) = blobs(90);
        let w = vec![1.0; 90];
        let params = GbtParams {
            n_estimators: 1,
            ..Default::default()
        };
        let m = train_gbt(&x, &y, &w, &params, 1).unwrap();
        let base = softmax_loss(&vec![[0.0; N_CLASSES]; 90], &y, &w);
        assert!((base - 16f64.ln()).abs() < 1e-12);
        let after: Vec<_> = (0..90).map(|i| m.raw_scores(x.row(i))).collect();
        assert!(softmax_loss(&after, &y, &w) < base);
    }

    #[test]
    fn full_sample_is_deterministic() {
        let (x, y) = blobs(60);
        let params = GbtParams {
            n_estimators: 5,
            subsample: 1.0,
            ..Default::default()
        };
        let a = train_gbt(&x, &y, &[1.0; 60], &params, 3).unwrap();
        let b = train_gbt(&x, &y, &[1.0; 60], &params, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rounds.len(), 5);
        assert!(a.rounds.iter().all(|r| r.len() == N_CLASSES));
        let p = a.predict_proba(&x);
        for i in 0..x.rows() {
            let mut s = a.raw_scores(x.row(i));
            softmax_in_place(&mut s);
            assert_eq!(p.row(i), &s[..]);
        }
    }

    #[test]
    fn depth_is_bounded() {
        let (x, y) = blobs(150);
        let params = GbtParams {
            n_estimators: 3,
            max_depth: 2,
            ..Default::default()
        };
        let m = train_gbt(&x, &y, &[1.0; 150], &params, 3).unwrap();
        assert!(m.rounds.iter().flatten().all(|t| t.depth() <= 2));
    }
}
