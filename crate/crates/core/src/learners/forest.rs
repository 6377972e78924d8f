//! Random forest over the 16 powerset classes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{partition_rows, BinnedMatrix, Node, Tree};
use super::{PowersetClass, N_CLASSES};
use crate::error::{CetError, Result};
use crate::matrix::Matrix;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features tried per node; `None` means ⌈√d⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 200,
            max_depth: 12,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

/// Each leaf holds the normalized class-weighted histogram of its samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree<Vec<f64>>>,
    pub n_features: usize,
    pub seed: u64,
}

impl ForestModel {
    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let mut out = Matrix::zeros(n, N_CLASSES);
        for t in &self.trees {
            for i in 0..n {
                let leaf = t.leaf_for(x.row(i));
                for (a, p) in out.row_mut(i).iter_mut().zip(leaf) {
                    *a += p;
                }
            }
        }
        for i in 0..n {
            let row = out.row_mut(i);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|a| *a /= total);
        }
        out
    }
}

fn weighted_gini_score(hist: &[f64]) -> f64 {
    // Σ h_c² / W; maximizing the sum over both children minimizes
    // the weighted Gini impurity W_L·G_L + W_R·G_R.
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    hist.iter().map(|h| h * h).sum::<f64>() / total
}

struct Grower<'a> {
    x: &'a BinnedMatrix,
    y: &'a [PowersetClass],
    w: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
}

impl Grower<'_> {
    fn class_hist(&self, rows: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; N_CLASSES];
        for &i in rows {
            h[self.y[i].id()] += self.w[i];
        }
        h
    }

    /// Best `(feature, bin)` over up to `mtry` non-constant features.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, u8)> {
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut features: Vec<usize> = (0..self.x.cols).collect();
        features.shuffle(rng);
        let mut visited = 0;
        let mut best: Option<(f64, usize, u8)> = None;
        let mut hist = Vec::new();
        let mut counts = Vec::new();
        let total = self.class_hist(rows);
        for f in features {
            if visited >= self.mtry {
                break;
            }
            let nb = self.x.n_bins(f);
            hist.clear();
            hist.resize(nb * N_CLASSES, 0.0);
            counts.clear();
            counts.resize(nb, 0usize);
            let col = self.x.column(f);
            for &i in rows {
                let b = col[i] as usize;
                hist[b * N_CLASSES + self.y[i].id()] += self.w[i];
                counts[b] += 1;
            }
            if counts.iter().filter(|c| **c > 0).count() < 2 {
                continue;
            }
            visited += 1;

            let mut left = vec![0.0; N_CLASSES];
            let mut left_n = 0;
            for b in 0..nb - 1 {
                if counts[b] == 0 {
                    continue;
                }
                left_n += counts[b];
                for c in 0..N_CLASSES {
                    left[c] += hist[b * N_CLASSES + c];
                }
                let right_n = rows.len() - left_n;
                if right_n == 0 {
                    break;
                }
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = weighted_gini_score(&left) + weighted_gini_score(&right);
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, b as u8));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&self, mut rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree<Vec<f64>> {
        let mut nodes: Vec<Node<Vec<f64>>> = vec![Node::Leaf(Vec::new())];
        // (node slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
        while let Some((slot, start, end, depth)) = stack.pop() {
            let part = &mut rows[start..end];
            let hist = self.class_hist(part);
            let total: f64 = hist.iter().sum();
            let pure = hist.iter().filter(|h| **h > 0.0).count() <= 1;
            let n = part.len();
            let split = if depth >= self.params.max_depth
                || n < self.params.min_samples_split.max(2)
                || n < 2 * self.params.min_samples_leaf.max(1)
                || pure
            {
                None
            } else {
                self.best_split(part, rng)
            };
            match split {
                None => {
                    let leaf = if total > 0.0 {
                        hist.iter().map(|h| h / total).collect()
                    } else {
                        // Only zero-weight samples reached this leaf.
                        let mut counts = [0.0; N_CLASSES];
                        for &i in part.iter() {
                            counts[self.y[i].id()] += 1.0;
                        }
                        counts.iter().map(|c| c / n as f64).collect()
                    };
                    nodes[slot] = Node::Leaf(leaf);
                }
                Some((feature, bin)) => {
                    let l = partition_rows(part, self.x.column(feature), bin);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(Vec::new()));
                    nodes.push(Node::Leaf(Vec::new()));
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

/// Bagged Gini trees; tree `t` draws its bootstrap sample and feature
/// subsets from a seed derived from `(seed, t)`.
pub fn train_forest(
    x: &Matrix,
    y: &[PowersetClass],
    w: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    let n = x.rows();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(CetError::LengthMismatch("forest training data".into()));
    }
    let d = x.cols();
    let mtry = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let binned = BinnedMatrix::fit(x);
    let grower = Grower {
        x: &binned,
        y,
        w,
        params,
        mtry,
    };
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, "forest", t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(rows, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features: d,
        seed,
    })
}
