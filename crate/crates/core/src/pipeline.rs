//! File-level steps behind each CLI subcommand.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::artifact::{load_model, save_model, ModelArtifact};
use crate::error::{CetError, Result};
use crate::featurize::{featurize_cohort, read_features, write_features, FeatureVector, FEATURE_NAMES};
use crate::importance::{permutation_importance, read_importance, write_importance, ImportanceReport};
use crate::ingest::{parse_events, parse_stays, select_cohort, write_cohort, Cohort, CohortSummary};
use crate::labeler::{
    label_cohort, read_labels, write_labels, CetLabels, CetRuleConfig, Label, LabelSummary,
};
use crate::learners::{fit_model, grid_search, CvResult, Params};
use crate::metrics::{evaluate, read_metrics, write_metrics, write_roc, EvaluationReport};
use crate::splitter::{
    read_assignment, stratified_kfold, stratified_shuffle_split, write_assignment, FoldAssignment,
};
use crate::synth::SynthConfig;

pub const STAYS_FILE: &str = "stays.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const COHORT_STAYS_FILE: &str = "cohort_stays.csv";
pub const COHORT_EVENTS_FILE: &str = "cohort_events.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const FOLDS_FILE: &str = "folds.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.csv";

pub fn model_file(family: &str) -> String {
    format!("model_{family}.cetm")
}

pub fn roc_file(model: &str, label: Label) -> String {
    format!("roc_{model}_{}.csv", label.name())
}

pub fn importance_file(label: Label) -> String {
    format!("importance_{}.csv", label.name())
}

pub fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CetError::MissingInput(path.display().to_string()),
        _ => CetError::Io(e),
    })
}

pub fn create_output(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn run_synth(cfg: &SynthConfig, out: &Path) -> Result<()> {
    crate::synth::write_cohort(
        cfg,
        create_output(&out.join(STAYS_FILE))?,
        create_output(&out.join(EVENTS_FILE))?,
        create_output(&out.join(TRUTH_FILE))?,
    )
}

pub fn load_cohort(stays: &Path, events: &Path) -> Result<(Cohort, CohortSummary)> {
    let stays = parse_stays(open_input(stays)?)?;
    select_cohort(stays, parse_events(open_input(events)?)?)
}

pub fn run_ingest(stays: &Path, events: &Path, out: &Path) -> Result<CohortSummary> {
    let (cohort, summary) = load_cohort(stays, events)?;
    write_cohort(
        &cohort,
        create_output(&out.join(COHORT_STAYS_FILE))?,
        create_output(&out.join(COHORT_EVENTS_FILE))?,
    )?;
    Ok(summary)
}

pub fn run_featurize(stays: &Path, events: &Path, out: &Path) -> Result<CohortSummary> {
    let (cohort, summary) = load_cohort(stays, events)?;
    write_features(
        &featurize_cohort(&cohort)?,
        create_output(&out.join(FEATURES_FILE))?,
    )?;
    Ok(summary)
}

pub fn run_label(stays: &Path, events: &Path, rules: &CetRuleConfig, out: &Path) -> Result<LabelSummary> {
    rules.validate()?;
    let (cohort, _) = load_cohort(stays, events)?;
    let (labels, summary) = label_cohort(&cohort, rules);
    let ids: Vec<String> = cohort.stays.iter().map(|s| s.stay_id.clone()).collect();
    write_labels(&ids, &labels, create_output(&out.join(LABELS_FILE))?)?;
    Ok(summary)
}

/// Writes `split.csv` (train/test per stay) and `folds.csv` (fold index per
/// training stay).
pub fn run_split(labels: &Path, test_fraction: f64, k: usize, seed: u64, out: &Path) -> Result<()> {
    let (ids, y) = read_labels(open_input(labels)?)?;
    let split = stratified_shuffle_split(&y, test_fraction, seed)?;
    let mut assignment = vec![String::new(); ids.len()];
    for &i in &split.train_indices {
        assignment[i] = "train".into();
    }
    for &i in &split.test_indices {
        assignment[i] = "test".into();
    }
    write_assignment(&ids, &assignment, create_output(&out.join(SPLIT_FILE))?)?;

    let train_y: Vec<CetLabels> = split.train_indices.iter().map(|&i| y[i]).collect();
    let folds = stratified_kfold(&train_y, k, seed)?;
    let train_ids: Vec<String> = split.train_indices.iter().map(|&i| ids[i].clone()).collect();
    let fold_names: Vec<String> = folds.fold_of.iter().map(|f| f.to_string()).collect();
    write_assignment(&train_ids, &fold_names, create_output(&out.join(FOLDS_FILE))?)
}

/// Feature rows joined with their labels, in feature-file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub labels: Vec<CetLabels>,
}

impl Table {
    pub fn select(&self, idx: &[usize]) -> Table {
        Table {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn join_table(features: Vec<FeatureVector>, ids: &[String], labels: &[CetLabels]) -> Result<Table> {
    if features.len() != labels.len() {
        return Err(CetError::LengthMismatch(format!(
            "{} feature rows vs {} label rows",
            features.len(),
            labels.len()
        )));
    }
    let by_id: HashMap<&str, CetLabels> = ids
        .iter()
        .map(String::as_str)
        .zip(labels.iter().copied())
        .collect();
    let joined = features
        .iter()
        .map(|f| {
            by_id
                .get(f.stay_id.as_str())
                .copied()
                .ok_or_else(|| CetError::MissingInput(format!("no label for stay {}", f.stay_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        ids: features.iter().map(|f| f.stay_id.clone()).collect(),
        features,
        labels: joined,
    })
}

pub fn load_table(features: &Path, labels: &Path) -> Result<Table> {
    let rows = read_features(open_input(features)?)?;
    let (ids, y) = read_labels(open_input(labels)?)?;
    join_table(rows, &ids, &y)
}

fn assignment_map(path: &Path) -> Result<HashMap<String, String>> {
    Ok(read_assignment(open_input(path)?)?.into_iter().collect())
}

/// `(train, test)` row indices of `table` per the split file.
pub fn load_split(path: &Path, table: &Table) -> Result<(Vec<usize>, Vec<usize>)> {
    let map = assignment_map(path)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, id) in table.ids.iter().enumerate() {
        match map.get(id).map(String::as_str) {
            Some("train") => train.push(i),
            Some("test") => test.push(i),
            Some(other) => {
                return Err(CetError::BadEnum {
                    row: i + 2,
                    field: "assignment",
                    value: other.to_string(),
                })
            }
            None => {
                return Err(CetError::MissingInput(format!(
                    "stay {id} absent from split file"
                )))
            }
        }
    }
    Ok((train, test))
}

fn load_folds(path: &Path, train: &Table, k: usize) -> Result<FoldAssignment> {
    let map = assignment_map(path)?;
    let fold_of = train
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let raw = map
                .get(id)
                .ok_or_else(|| CetError::MissingInput(format!("stay {id} absent from folds file")))?;
            raw.parse::<usize>()
                .ok()
                .filter(|f| *f < k)
                .ok_or_else(|| CetError::BadValue {
                    row: i + 2,
                    value: raw.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldAssignment { k, fold_of })
}

pub struct TrainRequest<'a> {
    pub features: &'a Path,
    pub labels: &'a Path,
    pub split: &'a Path,
    /// Used for grid search; computed from the training labels when absent.
    pub folds: Option<&'a Path>,
    pub k: usize,
    pub params: Params,
    /// Candidates to search instead of `params`.
    pub grid: Option<Vec<Params>>,
    pub rules: CetRuleConfig,
    pub seed: u64,
    pub out: &'a Path,
}

pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub cv: Option<CvResult>,
    pub artifact: ModelArtifact,
}

pub fn run_train(req: &TrainRequest) -> Result<TrainOutcome> {
    let table = load_table(req.features, req.labels)?;
    let (train_idx, _) = load_split(req.split, &table)?;
    let train = table.select(&train_idx);
    let family = req.params.family();

    let (params, cv) = match &req.grid {
        Some(candidates) => {
            let folds = match req.folds.filter(|p| p.exists()) {
                Some(p) => load_folds(p, &train, req.k)?,
                None => stratified_kfold(&train.labels, req.k, req.seed)?,
            };
            let cv = grid_search(candidates, &folds, &train.features, &train.labels, req.seed)?;
            (cv.best_params().clone(), Some(cv))
        }
        None => (req.params.clone(), None),
    };
    let trained = fit_model(&params, &train.features, &train.labels, req.seed)?;
    let artifact = ModelArtifact::new(trained, req.rules.clone());
    let model_path = req.out.join(model_file(family.name()));
    fs::create_dir_all(req.out)?;
    save_model(&artifact, &model_path)?;

    if let Some(cv) = &cv {
        let mut w =
            csv::Writer::from_writer(create_output(&req.out.join(format!("cv_{}.csv", family.name())))?);
        w.write_record(["candidate", "params", "mean_macro_f1", "fold_scores", "selected"])?;
        for (i, c) in cv.candidates.iter().enumerate() {
            let folds: Vec<String> = c.fold_scores.iter().map(|s| s.to_string()).collect();
            w.write_record([
                i.to_string(),
                c.params.describe(),
                c.mean.to_string(),
                folds.join(";"),
                u8::from(i == cv.best).to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(TrainOutcome {
        model_path,
        cv,
        artifact,
    })
}

/// Evaluate `artifact` on `table`, returning the report.
pub fn evaluate_table(name: &str, artifact: &ModelArtifact, table: &Table) -> Result<EvaluationReport> {
    let pred = artifact.trained.predict(&table.features)?;
    evaluate(name, &table.labels, &pred.hard_labels(), &pred.marginals())
}

/// Rows of `features` (restricted to the test side of `split` when given),
/// scored by every model. Writes `metrics.csv`, `summary.csv` and one ROC
/// file per model and label.
pub fn run_evaluate(
    models: &[PathBuf],
    features: &Path,
    truth: &Path,
    split: Option<&Path>,
    out: &Path,
) -> Result<Vec<EvaluationReport>> {
    if models.is_empty() {
        return Err(CetError::MissingInput("no model given".into()));
    }
    let mut table = load_table(features, truth)?;
    if let Some(split) = split {
        let (_, test) = load_split(split, &table)?;
        table = table.select(&test);
    }
    let mut reports = Vec::new();
    for path in models {
        let artifact = load_model(path)?;
        let name = artifact.family.name();
        let report = evaluate_table(name, &artifact, &table)?;
        for r in &report.labels {
            if let Some(curve) = &r.roc {
                write_roc(curve, create_output(&out.join(roc_file(name, r.label)))?)?;
            }
        }
        reports.push(report);
    }
    write_metrics(&reports, create_output(&out.join(METRICS_FILE))?)?;
    let mut w = csv::Writer::from_writer(create_output(&out.join(SUMMARY_FILE))?);
    w.write_record(["model", "n", "hamming_loss", "macro_f1", "macro_auc"])?;
    for r in &reports {
        let (m, auc) = r.macro_metrics();
        w.write_record([
            r.model.clone(),
            r.n.to_string(),
            r.hamming_loss.to_string(),
            m.f1.to_string(),
            auc.map_or_else(String::new, |a| a.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(reports)
}

pub fn run_importance(
    model: &Path,
    features: &Path,
    labels: &Path,
    split: Option<&Path>,
    repeats: usize,
    seed: u64,
    out: &Path,
) -> Result<ImportanceReport> {
    let artifact = load_model(model)?;
    let mut table = load_table(features, labels)?;
    if let Some(split) = split {
        let (_, test) = load_split(split, &table)?;
        table = table.select(&test);
    }
    let x = artifact.trained.impute(&table.features);
    let report = permutation_importance(
        &artifact.trained,
        &x,
        &table.labels,
        &FEATURE_NAMES,
        repeats,
        seed,
    )?;
    for l in Label::ALL {
        write_importance(report.for_label(l), create_output(&out.join(importance_file(l)))?)?;
    }
    Ok(report)
}

/// Join `metrics.csv` with the top three features of each label's
/// importance file (when present) into `report.csv`. Returns the rows.
pub fn run_report(dir: &Path) -> Result<Vec<Vec<String>>> {
    let metrics_path = dir.join(METRICS_FILE);
    if !metrics_path.exists() {
        return Err(CetError::MissingInput(metrics_path.display().to_string()));
    }
    let metrics = read_metrics(open_input(&metrics_path)?)?;
    let mut top: HashMap<&'static str, String> = HashMap::new();
    for l in Label::ALL {
        let p = dir.join(importance_file(l));
        if p.exists() {
            let mut rows = read_importance(open_input(&p)?)?;
            rows.sort_by(|a, b| b.mean.total_cmp(&a.mean));
            let names: Vec<String> = rows.iter().take(3).map(|r| r.feature.clone()).collect();
            top.insert(l.name(), names.join("; "));
        }
    }
    let header = [
        "model",
        "label",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "auc",
        "top_predictors",
    ];
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.model.clone(),
                m.label.clone(),
                format!("{:.2}", m.accuracy),
                format!("{:.2}", m.precision),
                format!("{:.2}", m.recall),
                format!("{:.2}", m.f1),
                m.auc.map_or_else(String::new, |a| format!("{a:.2}")),
                top.get(m.label.as_str()).cloned().unwrap_or_default(),
            ]
        })
        .collect();
    let mut w = csv::Writer::from_writer(create_output(&dir.join(REPORT_FILE))?);
    w.write_record(header)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(rows)
}
