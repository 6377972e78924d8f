//! First-24-hour feature extraction and the train-only preprocessing
//! statistics (median imputation, z-score scaling).

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::ingest::{EventRecord, Gender, SignalKind, StayRecord};
use crate::matrix::Matrix;

pub const N_FEATURES: usize = 19;

/// Column order of every feature matrix, feature file, and model artifact.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "spo2_mean",
    "spo2_min",
    "spo2_max",
    "sbp_mean",
    "sbp_min",
    "sbp_max",
    "map_mean",
    "map_min",
    "map_max",
    "hr_mean",
    "hr_min",
    "hr_max",
    "rr_mean",
    "rr_min",
    "rr_max",
    "creatinine_latest",
    "age",
    "gender_f",
    "gender_m",
];

pub const IDX_CREATININE: usize = 15;
pub const IDX_AGE: usize = 16;
pub const IDX_GENDER_F: usize = 17;
pub const IDX_GENDER_M: usize = 18;

pub const FEATURE_WINDOW_HOURS: i64 = 24;
pub const DAYS_PER_YEAR: f64 = 365.25;

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// Fractional age at `intime`. The birth date is taken to be July 1st of
/// `anchor_year - anchor_age`; whole years up to the anchor year count as
/// exactly `anchor_age`, and the calendar offset of `intime` from July 1st of
/// the anchor year is added in units of 365.25 days.
pub fn compute_age(anchor_age: u32, anchor_year: i32, intime: NaiveDateTime) -> Result<f64> {
    let anchor = NaiveDate::from_ymd_opt(anchor_year, 7, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .ok_or(CetError::NegativeAge)?;
    let offset_days = (intime - anchor).num_seconds() as f64 / 86_400.0;
    let age = f64::from(anchor_age) + offset_days / DAYS_PER_YEAR;
    if age < 0.0 {
        return Err(CetError::NegativeAge);
    }
    Ok(age)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VitalSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-signal summaries over `[intime, intime + 24h)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowAggregates {
    /// Indexed like [`SignalKind::VITALS`].
    pub vitals: [Option<VitalSummary>; 5],
    pub creatinine_latest: Option<f64>,
}

pub(crate) fn in_hours(intime: NaiveDateTime, t: NaiveDateTime, start: i64, end: i64) -> bool {
    let offset = t - intime;
    offset >= Duration::hours(start) && offset < Duration::hours(end)
}

pub fn aggregate_window(events: &[EventRecord], intime: NaiveDateTime) -> WindowAggregates {
    let mut acc = [(0usize, 0.0f64, f64::INFINITY, f64::NEG_INFINITY); 5];
    let mut latest: Option<(NaiveDateTime, f64)> = None;
    for e in events {
        if !in_hours(intime, e.charttime, 0, FEATURE_WINDOW_HOURS) {
            continue;
        }
        if let Some(k) = SignalKind::VITALS.iter().position(|s| *s == e.signal) {
            let a = &mut acc[k];
            a.0 += 1;
            a.1 += e.value;
            a.2 = a.2.min(e.value);
            a.3 = a.3.max(e.value);
        } else if e.signal == SignalKind::Creatinine {
            // Later rows win ties on charttime.
            if latest.is_none_or(|(t, _)| e.charttime >= t) {
                latest = Some((e.charttime, e.value));
            }
        }
    }
    let mut out = WindowAggregates {
        creatinine_latest: latest.map(|(_, v)| v),
        ..Default::default()
    };
    for (slot, (n, sum, min, max)) in out.vitals.iter_mut().zip(acc) {
        if n > 0 {
            // Rounding can push the mean a hair outside [min, max].
            let mean = (sum / n as f64).clamp(min, max);
            *slot = Some(VitalSummary { mean, min, max });
        }
    }
    out
}

/// One stay's feature row, before imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub stay_id: String,
    pub values: [Option<f64>; N_FEATURES],
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).and_then(|i| self.values[i])
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

pub fn build_feature_vector(stay: &StayRecord, aggregates: &WindowAggregates) -> Result<FeatureVector> {
    let mut values = [None; N_FEATURES];
    for (k, summary) in aggregates.vitals.iter().enumerate() {
        if let Some(s) = summary {
            values[3 * k] = Some(s.mean);
            values[3 * k + 1] = Some(s.min);
            values[3 * k + 2] = Some(s.max);
        }
    }
    values[IDX_CREATININE] = aggregates.creatinine_latest;
    values[IDX_AGE] = Some(compute_age(stay.anchor_age, stay.anchor_year, stay.intime)?);
    let (f, m) = match stay.gender {
        Gender::F => (1.0, 0.0),
        Gender::M => (0.0, 1.0),
    };
    values[IDX_GENDER_F] = Some(f);
    values[IDX_GENDER_M] = Some(m);
    Ok(FeatureVector {
        stay_id: stay.stay_id.clone(),
        values,
    })
}

/// Feature rows for a whole cohort, in cohort order.
pub fn featurize_cohort(cohort: &crate::ingest::Cohort) -> Result<Vec<FeatureVector>> {
    cohort
        .iter()
        .map(|(stay, events)| build_feature_vector(stay, &aggregate_window(events, stay.intime)))
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationStats {
    pub medians: Vec<f64>,
}

pub fn fit_imputation(train_rows: &[FeatureVector]) -> Result<ImputationStats> {
    let medians = (0..N_FEATURES)
        .map(|j| {
            let mut present: Vec<f64> = train_rows.iter().filter_map(|r| r.values[j]).collect();
            if present.is_empty() {
                return Err(CetError::AllMissingFeature(FEATURE_NAMES[j].to_string()));
            }
            present.sort_by(f64::total_cmp);
            Ok(median(&present))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImputationStats { medians })
}

impl ImputationStats {
    pub fn impute_row(&self, row: &FeatureVector) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for (j, v) in row.values.iter().enumerate() {
            out[j] = v.unwrap_or(self.medians[j]);
        }
        out
    }
}

/// Replace missing entries by the training medians, returning fully
/// present feature vectors.
pub fn apply_imputation(rows: &[FeatureVector], stats: &ImputationStats) -> Vec<FeatureVector> {
    rows.iter()
        .map(|r| FeatureVector {
            stay_id: r.stay_id.clone(),
            values: stats.impute_row(r).map(Some),
        })
        .collect()
}

/// Impute and pack into a dense matrix.
pub fn imputed_matrix(rows: &[FeatureVector], stats: &ImputationStats) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * N_FEATURES);
    for r in rows {
        data.extend_from_slice(&stats.impute_row(r));
    }
    Matrix::from_vec(rows.len(), N_FEATURES, data).expect("shape is consistent")
}

/// Population mean and standard deviation per column of the training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalingStats {
    pub fn is_constant(&self, j: usize) -> bool {
        self.stds[j] == 0.0
    }

    pub fn scale_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if self.is_constant(j) {
                0.0
            } else {
                (*v - self.means[j]) / self.stds[j]
            };
        }
    }
}

pub fn fit_scaling(train: &Matrix) -> ScalingStats {
    let n = train.rows() as f64;
    let (means, stds) = (0..train.cols())
        .map(|j| {
            let col = train.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            // Treat round-off noise on a constant column as exactly constant.
            let std = if col.iter().all(|v| *v == col[0]) {
                0.0
            } else {
                var.sqrt()
            };
            (mean, std)
        })
        .unzip();
    ScalingStats { means, stds }
}

pub fn apply_scaling(rows: &Matrix, stats: &ScalingStats) -> Matrix {
    let mut out = rows.clone();
    for i in 0..out.rows() {
        stats.scale_row(out.row_mut(i));
    }
    out
}

/// Write `features.csv`: stay_id, the 19 features (blank when missing), then
/// one 0/1 `<name>_missing` flag per feature.
pub fn write_features<W: std::io::Write>(rows: &[FeatureVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["stay_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header.extend(FEATURE_NAMES.iter().map(|s| format!("{s}_missing")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.stay_id.clone()];
        rec.extend(
            r.values
                .iter()
                .map(|v| v.map_or(String::new(), |x| x.to_string())),
        );
        rec.extend(
            r.values
                .iter()
                .map(|v| if v.is_some() { "0" } else { "1" }.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: std::io::Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CetError::MissingColumn(name.to_string()))
    };
    let id_col = find("stay_id")?;
    let cols = FEATURE_NAMES
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut values = [None; N_FEATURES];
        for (j, &c) in cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                continue;
            }
            let v: f64 =
                raw.parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| CetError::BadValue {
                        row: i + 2,
                        value: raw.to_string(),
                    })?;
            values[j] = Some(v);
        }
        out.push(FeatureVector {
            stay_id: rec.get(id_col).unwrap_or("").to_string(),
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_timestamp;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn at(hours: f64, signal: SignalKind, value: f64) -> EventRecord {
        EventRecord {
            stay_id: "s".into(),
            charttime: ts("2150-01-01 00:00") + Duration::seconds((hours * 3600.0) as i64),
            signal,
            value,
        }
    }

    #[test]
    fn age_on_the_proxy_anniversary() {
        assert_eq!(compute_age(50, 2150, ts("2150-07-01 00:00")).unwrap(), 50.0);
    }

    #[test]
    fn age_one_year_after_anchor() {
        // Calendar oracle: 2150-07-01 to 2151-07-01 spans 365 days (no Feb 29).
        let days = NaiveDate::from_ymd_opt(2151, 7, 1)
            .unwrap()
            .signed_duration_since(NaiveDate::from_ymd_opt(2150, 7, 1).unwrap())
            .num_days();
        assert_eq!(days, 365);
        let age = compute_age(50, 2150, ts("2151-07-01 00:00")).unwrap();
        assert!((age - (50.0 + 365.0 / 365.25)).abs() < 1e-12);
        assert!((age - 50.999).abs() < 1e-3);
    }

    #[test]
    fn leap_years_count_in_the_offset() {
        // 2152 is a leap year: 2152-01-01 to 2152-07-01 is 182 days.
        let age = compute_age(40, 2152, ts("2152-01-01 00:00")).unwrap();
        assert!((age - (40.0 - 182.0 / 365.25)).abs() < 1e-12);
    }

    #[test]
    fn age_before_birth_proxy_is_an_error() {
        // Birth proxy is 2090-07-01.
        assert!(matches!(
            compute_age(30, 2120, ts("2089-01-01 00:00")),
            Err(CetError::NegativeAge)
        ));
        assert!(matches!(
            compute_age(0, 2120, ts("2119-01-01 00:00")),
            Err(CetError::NegativeAge)
        ));
        let age = compute_age(30, 2120, ts("2119-01-01 00:00")).unwrap();
        assert!((age - (30.0 - 547.0 / 365.25)).abs() < 1e-12);
    }

    #[test]
    fn two_point_spo2_summary() {
        let evs = [at(1.0, SignalKind::SpO2, 96.0), at(5.0, SignalKind::SpO2, 88.0)];
        let agg = aggregate_window(&evs, ts("2150-01-01 00:00"));
        assert_eq!(
            agg.vitals[0],
            Some(VitalSummary {
                mean: 92.0,
                min: 88.0,
                max: 96.0
            })
        );
        assert!(agg.vitals[4].is_none());
    }

    #[test]
    fn creatinine_latest_respects_window() {
        let evs = [
            at(2.0, SignalKind::Creatinine, 1.0),
            at(23.0, SignalKind::Creatinine, 1.3),
            at(30.0, SignalKind::Creatinine, 2.0),
        ];
        let agg = aggregate_window(&evs, ts("2150-01-01 00:00"));
        assert_eq!(agg.creatinine_latest, Some(1.3));
    }

    #[test]
    fn window_is_half_open() {
        let evs = [
            at(-1.0, SignalKind::Hr, 200.0),
            at(0.0, SignalKind::Hr, 70.0),
            at(24.0, SignalKind::Hr, 10.0),
        ];
        let agg = aggregate_window(&evs, ts("2150-01-01 00:00"));
        assert_eq!(
            agg.vitals[3],
            Some(VitalSummary {
                mean: 70.0,
                min: 70.0,
                max: 70.0
            })
        );
    }

    fn stay(gender: Gender) -> StayRecord {
        StayRecord {
            stay_id: "s".into(),
            subject_id: "p".into(),
            hadm_id: "h".into(),
            intime: ts("2150-07-01 00:00"),
            anchor_age: 60,
            anchor_year: 2150,
            gender,
        }
    }

    #[test]
    fn one_hot_gender_and_missing_vitals() {
        let fv = build_feature_vector(&stay(Gender::F), &WindowAggregates::default()).unwrap();
        assert_eq!(fv.get("gender_f"), Some(1.0));
        assert_eq!(fv.get("gender_m"), Some(0.0));
        assert_eq!(fv.values[..16].iter().filter(|v| v.is_none()).count(), 16);
        assert!(fv.get("age").is_some());

        let fv = build_feature_vector(&stay(Gender::M), &WindowAggregates::default()).unwrap();
        assert_eq!(
            (fv.values[IDX_GENDER_F], fv.values[IDX_GENDER_M]),
            (Some(0.0), Some(1.0))
        );
    }

    #[test]
    fn complete_aggregates_fill_every_slot() {
        let s = VitalSummary {
            mean: 2.0,
            min: 1.0,
            max: 3.0,
        };
        let agg = WindowAggregates {
            vitals: [Some(s); 5],
            creatinine_latest: Some(1.1),
        };
        let fv = build_feature_vector(&stay(Gender::M), &agg).unwrap();
        assert!(fv.is_complete());
        assert_eq!(fv.get("rr_max"), Some(3.0));
        assert_eq!(fv.get("creatinine_latest"), Some(1.1));
    }

    fn fv(values: &[Option<f64>]) -> FeatureVector {
        let mut all = [Some(1.0); N_FEATURES];
        all[..values.len()].copy_from_slice(values);
        FeatureVector {
            stay_id: "x".into(),
            values: all,
        }
    }

    #[test]
    fn median_odd_and_even() {
        let rows: Vec<_> = [1.0, 2.0, 3.0].iter().map(|v| fv(&[Some(*v)])).collect();
        assert_eq!(fit_imputation(&rows).unwrap().medians[0], 2.0);
        let rows: Vec<_> = [4.0, 1.0, 3.0, 2.0].iter().map(|v| fv(&[Some(*v)])).collect();
        assert_eq!(fit_imputation(&rows).unwrap().medians[0], 2.5);
    }

    #[test]
    fn all_missing_feature_is_an_error() {
        let rows = vec![fv(&[Some(1.0), None]), fv(&[Some(2.0), None])];
        assert!(matches!(
            fit_imputation(&rows),
            Err(CetError::AllMissingFeature(name)) if name == "spo2_min"
        ));
    }

    #[test]
    fn imputation_fills_only_missing_and_is_idempotent() {
        let mut train = vec![fv(&[]); 3];
        for (i, r) in train.iter_mut().enumerate() {
            r.values[12] = Some(16.0 + 2.0 * i as f64);
        }
        let stats = fit_imputation(&train).unwrap();
        assert_eq!(stats.medians[12], 18.0);
        let mut row = fv(&[]);
        row.values[12] = None;
        row.values[0] = Some(42.0);
        let once = apply_imputation(&[row.clone()], &stats);
        assert_eq!(once[0].values[12], Some(18.0));
        assert_eq!(once[0].values[0], Some(42.0));
        assert_eq!(apply_imputation(&once, &stats), once);
        let full = fv(&[]);
        assert_eq!(apply_imputation(std::slice::from_ref(&full), &stats)[0], full);
    }

    #[test]
    fn scaling_midpoint_and_constant() {
        let train = Matrix::from_rows(&[[0.0, 3.0], [10.0, 3.0]]).unwrap();
        let stats = fit_scaling(&train);
        assert!(stats.is_constant(1));
        let out = apply_scaling(&Matrix::from_rows(&[[5.0, 7.0]]).unwrap(), &stats);
        assert_eq!(out.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn scaled_training_columns_are_standardized() {
        let rows: Vec<[f64; 2]> = (0..50)
            .map(|i| [i as f64 * 0.37 + 3.0, ((i * 7919) % 13) as f64])
            .collect();
        let train = Matrix::from_rows(&rows).unwrap();
        let scaled = apply_scaling(&train, &fit_scaling(&train));
        for j in 0..2 {
            let col = scaled.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn features_csv_roundtrip_preserves_missing() {
        let mut row = fv(&[Some(97.25), None]);
        row.stay_id = "s9".into();
        let mut buf = Vec::new();
        write_features(&[row.clone()], &mut buf).unwrap();
        let back = read_features(buf.as_slice()).unwrap();
        assert_eq!(back, vec![row]);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("stay_id,spo2_mean,"));
        assert!(text.lines().next().unwrap().ends_with("gender_m_missing"));
    }
}
