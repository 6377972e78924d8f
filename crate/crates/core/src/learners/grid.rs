//! Grid-search cross-validation scored by macro-F1 over the four labels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_model, Family, ForestParams, GbtParams, LogregParams, MlpParams, Params};
use crate::error::{CetError, Result};
use crate::featurize::FeatureVector;
use crate::labeler::CetLabels;
use crate::metrics::macro_f1;
use crate::seed::derive_seed;
use crate::splitter::FoldAssignment;

/// Candidate values per family. Every list is swept as a Cartesian product
/// with the other lists of the same family; unlisted parameters keep their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub logreg_c: Vec<f64>,
    pub forest_n_estimators: Vec<usize>,
    pub forest_max_depth: Vec<usize>,
    pub forest_min_samples_split: Vec<usize>,
    pub forest_min_samples_leaf: Vec<usize>,
    pub gbt_n_estimators: Vec<usize>,
    pub gbt_max_depth: Vec<usize>,
    pub gbt_learning_rate: Vec<f64>,
    pub gbt_subsample: Vec<f64>,
    pub mlp_hidden_dim: Vec<usize>,
    pub mlp_num_hidden_layers: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            logreg_c: vec![0.1, 1.0, 10.0, 100.0],
            forest_n_estimators: vec![100, 200],
            forest_max_depth: vec![8, 12],
            forest_min_samples_split: vec![2, 5],
            forest_min_samples_leaf: vec![1, 2],
            gbt_n_estimators: vec![100, 200],
            gbt_max_depth: vec![4, 8],
            gbt_learning_rate: vec![0.05, 0.1],
            gbt_subsample: vec![0.8, 1.0],
            mlp_hidden_dim: vec![64, 128],
            mlp_num_hidden_layers: vec![1, 2],
        }
    }
}

fn cartesian<A: Clone, B: Clone>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| (x.clone(), y.clone())))
        .collect()
}

impl HyperGrid {
    /// Candidates for one family, in grid order (first list varies slowest).
    pub fn candidates(&self, family: Family) -> Vec<Params> {
        match family {
            Family::Logreg => self
                .logreg_c
                .iter()
                .map(|&c| {
                    Params::Logreg(LogregParams {
                        c,
                        ..Default::default()
                    })
                })
                .collect(),
            Family::Forest => {
                let outer = cartesian(&self.forest_n_estimators, &self.forest_max_depth);
                let inner = cartesian(&self.forest_min_samples_split, &self.forest_min_samples_leaf);
                cartesian(&outer, &inner)
                    .into_iter()
                    .map(|((n, d), (s, l))| {
                        Params::Forest(ForestParams {
                            n_estimators: n,
                            max_depth: d,
                            min_samples_split: s,
                            min_samples_leaf: l,
                            ..Default::default()
                        })
                    })
                    .collect()
            }
            Family::Gbt => {
                let outer = cartesian(&self.gbt_n_estimators, &self.gbt_max_depth);
                let inner = cartesian(&self.gbt_learning_rate, &self.gbt_subsample);
                cartesian(&outer, &inner)
                    .into_iter()
                    .map(|((n, d), (lr, ss))| {
                        Params::Gbt(GbtParams {
                            n_estimators: n,
                            max_depth: d,
                            learning_rate: lr,
                            subsample: ss,
                            ..Default::default()
                        })
                    })
                    .collect()
            }
            Family::Mlp => cartesian(&self.mlp_hidden_dim, &self.mlp_num_hidden_layers)
                .into_iter()
                .map(|(h, l)| {
                    Params::Mlp(MlpParams {
                        hidden_dim: h,
                        num_hidden_layers: l,
                        ..Default::default()
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: Params,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub candidates: Vec<CandidateScore>,
    pub best: usize,
}

impl CvResult {
    pub fn best_params(&self) -> &Params {
        &self.candidates[self.best].params
    }
}

/// Score every candidate on every fold and keep the best mean macro-F1
/// (first in grid order on ties). Each fold refits imputation, scaling and
/// class weights from its own training part via [`fit_model`].
pub fn grid_search(
    candidates: &[Params],
    folds: &FoldAssignment,
    rows: &[FeatureVector],
    labels: &[CetLabels],
    seed: u64,
) -> Result<CvResult> {
    if candidates.is_empty() {
        return Err(CetError::Config("empty hyperparameter grid".into()));
    }
    if rows.len() != labels.len() || folds.fold_of.len() != rows.len() {
        return Err(CetError::LengthMismatch("grid search inputs".into()));
    }
    let units: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..folds.k).map(move |f| (c, f)))
        .collect();
    let scores: Vec<f64> = units
        .par_iter()
        .map(|&(c, f)| {
            let (train, valid) = folds.fold(f);
            let tr_rows: Vec<FeatureVector> = train.iter().map(|&i| rows[i].clone()).collect();
            let tr_labels: Vec<CetLabels> = train.iter().map(|&i| labels[i]).collect();
            let va_rows: Vec<FeatureVector> = valid.iter().map(|&i| rows[i].clone()).collect();
            let va_labels: Vec<CetLabels> = valid.iter().map(|&i| labels[i]).collect();
            let unit_seed = derive_seed(seed, "grid", (c * folds.k + f) as u64);
            let model = fit_model(&candidates[c], &tr_rows, &tr_labels, unit_seed)?;
            let pred = model.predict(&va_rows)?;
            macro_f1(&va_labels, &pred.hard_labels())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(candidates.len());
    let mut best = 0;
    for (c, params) in candidates.iter().enumerate() {
        let fold_scores = scores[c * folds.k..(c + 1) * folds.k].to_vec();
        let mean = fold_scores.iter().sum::<f64>() / folds.k as f64;
        if mean
            > out
                .get(best)
                .map_or(f64::NEG_INFINITY, |b: &CandidateScore| b.mean)
        {
            best = c;
        }
        out.push(CandidateScore {
            params: params.clone(),
            fold_scores,
            mean,
        });
    }
    Ok(CvResult {
        candidates: out,
        best,
    })
}
