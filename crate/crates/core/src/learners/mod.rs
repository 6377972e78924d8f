//! Label-powerset classifiers.
//!
//! The four CET labels are folded into one of 16 classes, a multi-class
//! learner is fitted with inverse-frequency class weights, and predictions
//! are decoded back into per-label marginals and hard labels.

pub mod forest;
pub mod gbt;
pub mod grid;
pub mod logreg;
pub mod mlp;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::featurize::{
    fit_imputation, fit_scaling, imputed_matrix, FeatureVector, ImputationStats, ScalingStats, N_FEATURES,
};
use crate::labeler::{CetLabels, Label};
use crate::matrix::Matrix;

pub use forest::{train_forest, ForestModel, ForestParams};
pub use gbt::{train_gbt, BoostedModel, GbtParams};
pub use grid::{grid_search, CvResult, HyperGrid};
pub use logreg::{train_logreg, LinearModel, LogregParams};
pub use mlp::{train_mlp, MlpModel, MlpParams};

pub const N_CLASSES: usize = 16;

/// Integer id of a label combination: respiratory·8 + hemodynamic·4 +
/// renal·2 + neurologic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PowersetClass(u8);

impl PowersetClass {
    pub fn new(id: u32) -> Result<Self> {
        if id < N_CLASSES as u32 {
            Ok(PowersetClass(id as u8))
        } else {
            Err(CetError::BadClassId(id))
        }
    }

    pub fn id(self) -> usize {
        usize::from(self.0)
    }

    pub fn has(self, label: Label) -> bool {
        self.0 & label.bit() != 0
    }
}

pub fn powerset_encode(y: &CetLabels) -> PowersetClass {
    let id = Label::ALL
        .iter()
        .filter(|l| y.get(**l))
        .fold(0u8, |acc, l| acc | l.bit());
    PowersetClass(id)
}

pub fn powerset_decode(id: u32) -> Result<CetLabels> {
    let c = PowersetClass::new(id)?;
    let mut y = CetLabels::default();
    for l in Label::ALL {
        y.set(l, c.has(l));
    }
    Ok(y)
}

/// Per-class sample weights, `N / (K_present * n_c)` for classes seen in
/// training and 0 for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; N_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; N_CLASSES])
    }

    pub fn of(&self, c: PowersetClass) -> f64 {
        self.0[c.id()]
    }

    pub fn per_sample(&self, y: &[PowersetClass]) -> Vec<f64> {
        y.iter().map(|c| self.of(*c)).collect()
    }
}

pub fn compute_class_weights(train_classes: &[PowersetClass]) -> ClassWeights {
    let mut counts = [0usize; N_CLASSES];
    for c in train_classes {
        counts[c.id()] += 1;
    }
    let n = train_classes.len() as f64;
    let present = counts.iter().filter(|c| **c > 0).count() as f64;
    let mut w = [0.0; N_CLASSES];
    for (wc, nc) in w.iter_mut().zip(counts) {
        if nc > 0 {
            *wc = n / (present * nc as f64);
        }
    }
    ClassWeights(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logreg,
    Forest,
    Gbt,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Logreg, Family::Forest, Family::Gbt, Family::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logreg => "logreg",
            Family::Forest => "forest",
            Family::Gbt => "gbt",
            Family::Mlp => "mlp",
        }
    }

    /// Tree ensembles split on single features and are trained unscaled.
    pub fn is_tree(self) -> bool {
        matches!(self, Family::Forest | Family::Gbt)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = CetError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CetError::Config(format!("unknown model family `{s}`")))
    }
}

/// Hyperparameters of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Params {
    Logreg(LogregParams),
    Forest(ForestParams),
    Gbt(GbtParams),
    Mlp(MlpParams),
}

impl Params {
    pub fn family(&self) -> Family {
        match self {
            Params::Logreg(_) => Family::Logreg,
            Params::Forest(_) => Family::Forest,
            Params::Gbt(_) => Family::Gbt,
            Params::Mlp(_) => Family::Mlp,
        }
    }

    /// The configurations reported as final for each family.
    pub fn default_for(family: Family) -> Params {
        match family {
            Family::Logreg => Params::Logreg(LogregParams::default()),
            Family::Forest => Params::Forest(ForestParams::default()),
            Family::Gbt => Params::Gbt(GbtParams::default()),
            Family::Mlp => Params::Mlp(MlpParams::default()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Params::Logreg(p) => format!("C={}", p.c),
            Params::Forest(p) => format!(
                "n_estimators={} max_depth={} min_samples_split={} min_samples_leaf={}",
                p.n_estimators, p.max_depth, p.min_samples_split, p.min_samples_leaf
            ),
            Params::Gbt(p) => format!(
                "n_estimators={} max_depth={} learning_rate={} subsample={}",
                p.n_estimators, p.max_depth, p.learning_rate, p.subsample
            ),
            Params::Mlp(p) => format!(
                "hidden_dim={} num_hidden_layers={} lr={} batch_size={} epochs={}",
                p.hidden_dim, p.num_hidden_layers, p.lr, p.batch_size, p.epochs
            ),
        }
    }
}

/// The fitted learner without any preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Linear(LinearModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_features(),
            Model::Forest(m) => m.n_features,
            Model::Boosted(m) => m.n_features,
            Model::Mlp(m) => m.n_features(),
        }
    }

    /// Class distribution per row on already-preprocessed input.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_features() {
            return Err(CetError::PreprocessMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        Ok(match self {
            Model::Linear(m) => m.predict_proba(x),
            Model::Forest(m) => m.predict_proba(x),
            Model::Boosted(m) => m.predict_proba(x),
            Model::Mlp(m) => m.predict_proba(x),
        })
    }
}

/// Anything that maps an imputed feature matrix to 16-class probabilities.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix>;
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        Model::n_features(self)
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Model::predict_proba(self, x)
    }
}

/// A learner together with the preprocessing state fitted on its
/// training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: Params,
    pub imputation: ImputationStats,
    /// Absent for tree families.
    pub scaling: Option<ScalingStats>,
    pub class_weights: ClassWeights,
    pub seed: u64,
    pub model: Model,
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn impute(&self, rows: &[FeatureVector]) -> Matrix {
        imputed_matrix(rows, &self.imputation)
    }

    /// Probabilities from raw (possibly incomplete) feature rows.
    pub fn predict(&self, rows: &[FeatureVector]) -> Result<Prediction> {
        self.predict_imputed(&self.impute(rows))
    }

    pub fn predict_imputed(&self, x: &Matrix) -> Result<Prediction> {
        Ok(Prediction {
            proba: Predictor::predict_proba(self, x)?,
        })
    }
}

impl Predictor for TrainedModel {
    fn n_features(&self) -> usize {
        self.model.n_features()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.model.n_features() {
            return Err(CetError::PreprocessMismatch {
                expected: self.model.n_features(),
                got: x.cols(),
            });
        }
        match &self.scaling {
            Some(s) => self.model.predict_proba(&crate::featurize::apply_scaling(x, s)),
            None => self.model.predict_proba(x),
        }
    }
}

/// Output of one prediction pass. Marginals (for ROC) and hard labels (for
/// threshold metrics) are both derived from the same class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub proba: Matrix,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.proba.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.proba.rows() == 0
    }

    pub fn marginals(&self) -> Vec<[f64; 4]> {
        self.proba.iter_rows().map(label_marginals).collect()
    }

    pub fn classes(&self) -> Vec<PowersetClass> {
        self.proba.iter_rows().map(argmax_class).collect()
    }

    pub fn hard_labels(&self) -> Vec<CetLabels> {
        self.classes()
            .into_iter()
            .map(|c| powerset_decode(c.id() as u32).expect("argmax is in range"))
            .collect()
    }

    pub fn scores(&self, label: Label) -> Vec<f64> {
        self.proba
            .iter_rows()
            .map(|r| label_marginals(r)[label.index()])
            .collect()
    }
}

/// Probability of each label: the summed mass of the 8 classes with that bit set.
pub fn label_marginals(dist: &[f64]) -> [f64; 4] {
    let mut m = [0.0; 4];
    for l in Label::ALL {
        m[l.index()] = dist
            .iter()
            .enumerate()
            .filter(|(c, _)| (*c as u8) & l.bit() != 0)
            .map(|(_, p)| *p)
            .sum();
    }
    m
}

/// Most probable class; ties go to the lowest id.
pub fn argmax_class(dist: &[f64]) -> PowersetClass {
    let mut best = 0;
    for (c, p) in dist.iter().enumerate() {
        if *p > dist[best] {
            best = c;
        }
    }
    PowersetClass(best as u8)
}

pub(crate) fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Fit preprocessing on `train_rows`, then train `params` on them.
pub fn fit_model(
    params: &Params,
    train_rows: &[FeatureVector],
    labels: &[CetLabels],
    seed: u64,
) -> Result<TrainedModel> {
    if train_rows.len() != labels.len() {
        return Err(CetError::LengthMismatch(format!(
            "{} feature rows vs {} label rows",
            train_rows.len(),
            labels.len()
        )));
    }
    if train_rows.is_empty() {
        return Err(CetError::MissingInput("no training rows".into()));
    }
    let imputation = fit_imputation(train_rows)?;
    let x = imputed_matrix(train_rows, &imputation);
    debug_assert_eq!(x.cols(), N_FEATURES);
    let y: Vec<PowersetClass> = labels.iter().map(powerset_encode).collect();
    let class_weights = compute_class_weights(&y);
    let w = class_weights.per_sample(&y);

    let (scaling, model) = match params {
        Params::Logreg(p) => {
            let s = fit_scaling(&x);
            let xs = crate::featurize::apply_scaling(&x, &s);
            (Some(s), Model::Linear(train_logreg(&xs, &y, &w, p)?))
        }
        Params::Mlp(p) => {
            let s = fit_scaling(&x);
            let xs = crate::featurize::apply_scaling(&x, &s);
            (Some(s), Model::Mlp(train_mlp(&xs, &y, &w, p, seed)?))
        }
        Params::Forest(p) => (None, Model::Forest(train_forest(&x, &y, &w, p, seed)?)),
        Params::Gbt(p) => (None, Model::Boosted(train_gbt(&x, &y, &w, p, seed)?)),
    };
    Ok(TrainedModel {
        params: params.clone(),
        imputation,
        scaling,
        class_weights,
        seed,
        model,
    })
}
