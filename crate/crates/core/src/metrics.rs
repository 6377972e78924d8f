//! Per-label classification metrics and ROC curves.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::labeler::{CetLabels, Label};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion counts for each of the four labels.
pub fn confusion(y_true: &[CetLabels], y_pred: &[CetLabels]) -> Result<[ConfusionCounts; 4]> {
    if y_true.len() != y_pred.len() {
        return Err(CetError::LengthMismatch(format!(
            "{} true rows vs {} predicted rows",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut out = [ConfusionCounts::default(); 4];
    for (t, p) in y_true.iter().zip(y_pred) {
        for l in Label::ALL {
            let c = &mut out[l.index()];
            match (t.get(l), p.get(l)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zero denominators give 0 for precision and recall; an empty count set
/// has accuracy 0.
pub fn label_metrics(c: &ConfusionCounts) -> LabelMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    LabelMetrics {
        accuracy: ratio(c.tp + c.tn, c.n()),
        precision,
        recall,
        f1,
    }
}

/// Fraction of the `4n` label slots that disagree.
pub fn hamming_loss(y_true: &[CetLabels], y_pred: &[CetLabels]) -> Result<f64> {
    let counts = confusion(y_true, y_pred)?;
    let wrong: usize = counts.iter().map(|c| c.fp + c.fn_).sum();
    Ok(ratio(wrong, 4 * y_true.len()))
}

/// Unweighted mean of the four per-label F1 scores.
pub fn macro_f1(y_true: &[CetLabels], y_pred: &[CetLabels]) -> Result<f64> {
    let counts = confusion(y_true, y_pred)?;
    Ok(counts.iter().map(|c| label_metrics(c).f1).sum::<f64>() / 4.0)
}

/// F1 of a single label.
pub fn label_f1(y_true: &[CetLabels], y_pred: &[CetLabels], label: Label) -> Result<f64> {
    Ok(label_metrics(&confusion(y_true, y_pred)?[label.index()]).f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Point `i` classifies `score >= thresholds[i]` as positive; the first
    /// point is the empty prediction at `+inf`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// Threshold sweep over distinct scores, highest first. The trapezoid area
/// is accumulated in integer units, which makes it equal to the
/// Mann–Whitney statistic with ties counted as one half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(CetError::LengthMismatch("scores vs truth".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CetError::NonFinite("ROC scores"));
    }
    let pos = truth.iter().filter(|t| **t).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(CetError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = RocCurve {
        thresholds: vec![f64::INFINITY],
        fpr: vec![0.0],
        tpr: vec![0.0],
        auc: 0.0,
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp0 + tp);
        curve.thresholds.push(s);
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
    }
    curve.auc = twice_area as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64;
    Ok(curve)
}

/// Metrics of one model on one label, plus the AUC of its marginal scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: Label,
    pub counts: ConfusionCounts,
    pub metrics: LabelMetrics,
    /// `None` when the truth column is constant.
    pub roc: Option<RocCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n: usize,
    pub labels: Vec<LabelReport>,
    pub hamming_loss: f64,
}

impl EvaluationReport {
    pub fn macro_metrics(&self) -> (LabelMetrics, Option<f64>) {
        let k = self.labels.len() as f64;
        let mut m = LabelMetrics::default();
        for r in &self.labels {
            m.accuracy += r.metrics.accuracy / k;
            m.precision += r.metrics.precision / k;
            m.recall += r.metrics.recall / k;
            m.f1 += r.metrics.f1 / k;
        }
        let aucs: Option<Vec<f64>> = self
            .labels
            .iter()
            .map(|r| r.roc.as_ref().map(|c| c.auc))
            .collect();
        (m, aucs.map(|a| a.iter().sum::<f64>() / k))
    }
}

/// Hard-label metrics from `y_pred` and ROC from `marginals`, which must
/// come from the same prediction pass.
pub fn evaluate(
    model: &str,
    y_true: &[CetLabels],
    y_pred: &[CetLabels],
    marginals: &[[f64; 4]],
) -> Result<EvaluationReport> {
    if marginals.len() != y_true.len() {
        return Err(CetError::LengthMismatch(format!(
            "{} truth rows vs {} scored rows",
            y_true.len(),
            marginals.len()
        )));
    }
    let counts = confusion(y_true, y_pred)?;
    let labels = Label::ALL
        .iter()
        .map(|&l| {
            let scores: Vec<f64> = marginals.iter().map(|m| m[l.index()]).collect();
            let truth: Vec<bool> = y_true.iter().map(|y| y.get(l)).collect();
            let roc = match roc_auc(&scores, &truth) {
                Ok(c) => Some(c),
                Err(CetError::SingleClass) => None,
                Err(e) => return Err(e),
            };
            Ok(LabelReport {
                label: l,
                counts: counts[l.index()],
                metrics: label_metrics(&counts[l.index()]),
                roc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        model: model.to_string(),
        n: y_true.len(),
        labels,
        hamming_loss: hamming_loss(y_true, y_pred)?,
    })
}

pub const METRICS_HEADER: [&str; 7] = ["model", "label", "accuracy", "precision", "recall", "f1", "auc"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Append this report's rows (four labels, then `macro`) to a metrics table.
pub fn write_metrics_rows<W: Write>(report: &EvaluationReport, w: &mut csv::Writer<W>) -> Result<()> {
    for r in &report.labels {
        w.write_record([
            report.model.clone(),
            r.label.name().to_string(),
            r.metrics.accuracy.to_string(),
            r.metrics.precision.to_string(),
            r.metrics.recall.to_string(),
            r.metrics.f1.to_string(),
            fmt_opt(r.roc.as_ref().map(|c| c.auc)),
        ])?;
    }
    let (m, auc) = report.macro_metrics();
    w.write_record([
        report.model.clone(),
        "macro".to_string(),
        m.accuracy.to_string(),
        m.precision.to_string(),
        m.recall.to_string(),
        m.f1.to_string(),
        fmt_opt(auc),
    ])?;
    Ok(())
}

pub fn write_metrics<W: Write>(reports: &[EvaluationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in reports {
        write_metrics_rows(r, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc<W: Write>(curve: &RocCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for i in 0..curve.fpr.len() {
        w.write_record([
            curve.thresholds[i].to_string(),
            curve.fpr[i].to_string(),
            curve.tpr[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a metrics table as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub label: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = METRICS_HEADER
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| CetError::MissingColumn(n.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let v = rec.get(cols[c]).unwrap_or("");
            v.parse().map_err(|_| CetError::BadValue {
                row: i + 2,
                value: v.to_string(),
            })
        };
        let auc_raw = rec.get(cols[6]).unwrap_or("");
        rows.push(MetricsRow {
            model: rec.get(cols[0]).unwrap_or("").to_string(),
            label: rec.get(cols[1]).unwrap_or("").to_string(),
            accuracy: num(2)?,
            precision: num(3)?,
            recall: num(4)?,
            f1: num(5)?,
            auc: if auc_raw.is_empty() { None } else { Some(num(6)?) },
        });
    }
    Ok(rows)
}
