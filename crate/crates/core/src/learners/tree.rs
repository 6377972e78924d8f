//! Shared tree machinery: feature binning and the axis-aligned tree.
//!
//! Bin edges are actual training values picked at rank positions, and a
//! split stores the edge itself as its threshold (`x <= threshold` goes
//! left). Both choices depend only on the order of values, so any strictly
//! increasing transform of a feature yields the same tree structure and
//! the same predictions.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub const MAX_BINS: usize = 256;

/// Training matrix quantized to at most 256 bins per feature, column-major.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub rows: usize,
    pub cols: usize,
    bins: Vec<u8>,
    /// Upper edge of every bin, per feature; last edge is the column max.
    pub edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn fit(x: &Matrix) -> Self {
        let (rows, cols) = (x.rows(), x.cols());
        let mut bins = vec![0u8; rows * cols];
        let mut edges = Vec::with_capacity(cols);
        for j in 0..cols {
            let col = x.column(j);
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let mut unique = sorted.clone();
            unique.dedup();
            let e = if unique.len() <= MAX_BINS {
                unique
            } else {
                let mut e: Vec<f64> = (1..=MAX_BINS)
                    .map(|b| sorted[(b * rows).div_ceil(MAX_BINS) - 1])
                    .collect();
                e.dedup();
                e
            };
            for (i, v) in col.iter().enumerate() {
                let b = e.partition_point(|edge| edge < v).min(e.len() - 1);
                bins[j * rows + i] = b as u8;
            }
            edges.push(e);
        }
        BinnedMatrix {
            rows,
            cols,
            bins,
            edges,
        }
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[u8] {
        &self.bins[j * self.rows..(j + 1) * self.rows]
    }

    pub fn n_bins(&self, j: usize) -> usize {
        self.edges[j].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Split {
        feature: usize,
        threshold: f64,
        /// Bin index matching `threshold` on the training matrix.
        bin: u8,
        left: usize,
        right: usize,
    },
    Leaf(L),
}

/// Axis-aligned binary tree stored as a flat node array, root at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf_for(&self, row: &[f64]) -> &L {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf(v) => return v,
            }
        }
    }

    /// Same walk as [`Tree::leaf_for`], on a row of the training matrix.
    pub fn leaf_for_binned(&self, x: &BinnedMatrix, i: usize) -> &L {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    bin,
                    left,
                    right,
                    ..
                } => {
                    at = if x.column(*feature)[i] <= *bin {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf(v) => return v,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<L>(t: &Tree<L>, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf(_) => 0,
            }
        }
        walk(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &L> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }
}

/// Reorder `rows` so that those going left (bin <= `bin`) come first;
/// returns the size of the left part.
pub fn partition_rows(rows: &mut [usize], column: &[u8], bin: u8) -> usize {
    let mut l = 0;
    for k in 0..rows.len() {
        if column[rows[k]] <= bin {
            rows.swap(l, k);
            l += 1;
        }
    }
    l
}
