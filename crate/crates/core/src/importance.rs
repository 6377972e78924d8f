//! Permutation importance: drop in per-label F1 when one feature column of
//! the evaluation matrix is shuffled.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::labeler::{CetLabels, Label};
use crate::learners::{powerset_decode, Prediction, Predictor};
use crate::matrix::Matrix;
use crate::metrics::confusion;
use crate::metrics::label_metrics;
use crate::seed::rng_for;

pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
}

/// `per_label[l]` lists every feature in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub repeats: usize,
    pub per_label: Vec<Vec<FeatureImportance>>,
}

impl ImportanceReport {
    pub fn for_label(&self, label: Label) -> &[FeatureImportance] {
        &self.per_label[label.index()]
    }

    /// Features of `label` sorted by decreasing mean importance (stable on ties).
    pub fn ranked(&self, label: Label) -> Vec<&FeatureImportance> {
        let mut v: Vec<&FeatureImportance> = self.for_label(label).iter().collect();
        v.sort_by(|a, b| b.mean.total_cmp(&a.mean));
        v
    }
}

fn per_label_f1(model: &dyn Predictor, x: &Matrix, y: &[CetLabels]) -> Result<[f64; 4]> {
    let pred = Prediction {
        proba: model.predict_proba(x)?,
    };
    let hard: Vec<CetLabels> = pred
        .classes()
        .into_iter()
        .map(|c| powerset_decode(c.id() as u32))
        .collect::<Result<_>>()?;
    let counts = confusion(y, &hard)?;
    Ok(std::array::from_fn(|l| label_metrics(&counts[l]).f1))
}

/// Each `(feature, repeat)` pair gets its own seeded shuffle, and the four
/// label scores are read off the same shuffled prediction pass. Standard
/// deviations are over repeats (population form).
pub fn permutation_importance(
    model: &dyn Predictor,
    x: &Matrix,
    y: &[CetLabels],
    feature_names: &[&str],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(CetError::Config("permutation repeats must be at least 1".into()));
    }
    if x.rows() != y.len() {
        return Err(CetError::LengthMismatch(format!(
            "{} feature rows vs {} label rows",
            x.rows(),
            y.len()
        )));
    }
    if feature_names.len() != x.cols() {
        return Err(CetError::PreprocessMismatch {
            expected: feature_names.len(),
            got: x.cols(),
        });
    }
    let base = per_label_f1(model, x, y)?;
    let units: Vec<(usize, usize)> = (0..x.cols())
        .flat_map(|f| (0..repeats).map(move |r| (f, r)))
        .collect();
    let drops: Vec<[f64; 4]> = units
        .par_iter()
        .map(|&(f, r)| {
            let mut col = x.column(f);
            col.shuffle(&mut rng_for(seed, "importance", (f * repeats + r) as u64));
            let mut xp = x.clone();
            xp.set_column(f, &col);
            let s = per_label_f1(model, &xp, y)?;
            Ok(std::array::from_fn(|l| base[l] - s[l]))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_label = Label::ALL
        .iter()
        .map(|l| {
            (0..x.cols())
                .map(|f| {
                    let d: Vec<f64> = drops[f * repeats..(f + 1) * repeats]
                        .iter()
                        .map(|v| v[l.index()])
                        .collect();
                    let mean = d.iter().sum::<f64>() / repeats as f64;
                    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
                    FeatureImportance {
                        feature: feature_names[f].to_string(),
                        mean,
                        std: var.sqrt(),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ImportanceReport { repeats, per_label })
}

pub fn write_importance<W: Write>(rows: &[FeatureImportance], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "mean", "std"])?;
    for r in rows {
        w.write_record([r.feature.clone(), r.mean.to_string(), r.std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_importance<R: std::io::Read>(input: R) -> Result<Vec<FeatureImportance>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = ["feature", "mean", "std"]
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| CetError::MissingColumn(n.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let v = rec.get(cols[c]).unwrap_or("");
            v.parse().map_err(|_| CetError::BadValue {
                row: i + 2,
                value: v.to_string(),
            })
        };
        out.push(FeatureImportance {
            feature: rec.get(cols[0]).unwrap_or("").to_string(),
            mean: num(1)?,
            std: num(2)?,
        });
    }
    Ok(out)
}
