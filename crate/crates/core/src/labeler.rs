//! Rule-based Care Escalation Trigger labels from hours 24–72 after intime.

use std::fmt;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::featurize::FEATURE_WINDOW_HOURS;
use crate::ingest::{Cohort, EventRecord, SignalKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Respiratory,
    Hemodynamic,
    Renal,
    Neurologic,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Respiratory,
        Label::Hemodynamic,
        Label::Renal,
        Label::Neurologic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::Respiratory => "respiratory",
            Label::Hemodynamic => "hemodynamic",
            Label::Renal => "renal",
            Label::Neurologic => "neurologic",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bit weight of this label inside a powerset class id.
    pub fn bit(self) -> u8 {
        8 >> self.index()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CetLabels {
    pub respiratory: bool,
    pub hemodynamic: bool,
    pub renal: bool,
    pub neurologic: bool,
}

impl CetLabels {
    pub fn new(respiratory: bool, hemodynamic: bool, renal: bool, neurologic: bool) -> Self {
        CetLabels {
            respiratory,
            hemodynamic,
            renal,
            neurologic,
        }
    }

    pub fn get(&self, label: Label) -> bool {
        match label {
            Label::Respiratory => self.respiratory,
            Label::Hemodynamic => self.hemodynamic,
            Label::Renal => self.renal,
            Label::Neurologic => self.neurologic,
        }
    }

    pub fn set(&mut self, label: Label, value: bool) {
        match label {
            Label::Respiratory => self.respiratory = value,
            Label::Hemodynamic => self.hemodynamic = value,
            Label::Renal => self.renal = value,
            Label::Neurologic => self.neurologic = value,
        }
    }

    pub fn as_array(&self) -> [bool; 4] {
        [self.respiratory, self.hemodynamic, self.renal, self.neurologic]
    }

    pub fn from_array(a: [bool; 4]) -> Self {
        CetLabels::new(a[0], a[1], a[2], a[3])
    }
}

/// Every threshold the four rules use. Overridable from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CetRuleConfig {
    pub spo2_threshold: f64,
    pub spo2_min_count: usize,
    pub rr_threshold: f64,
    pub rr_min_count: usize,
    pub map_threshold: f64,
    pub sbp_threshold: f64,
    pub creat_delta: f64,
    pub creat_peak: f64,
    pub gcs_drop: f64,
    pub window_start_hours: i64,
    pub window_end_hours: i64,
}

impl Default for CetRuleConfig {
    fn default() -> Self {
        CetRuleConfig {
            spo2_threshold: 90.0,
            spo2_min_count: 2,
            rr_threshold: 30.0,
            rr_min_count: 2,
            map_threshold: 65.0,
            sbp_threshold: 90.0,
            creat_delta: 0.3,
            creat_peak: 1.2,
            gcs_drop: 2.0,
            window_start_hours: FEATURE_WINDOW_HOURS,
            window_end_hours: 72,
        }
    }
}

impl CetRuleConfig {
    pub fn validate(&self) -> Result<()> {
        let thresholds = [
            self.spo2_threshold,
            self.rr_threshold,
            self.map_threshold,
            self.sbp_threshold,
            self.creat_delta,
            self.creat_peak,
            self.gcs_drop,
        ];
        if thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CetError::Config("rule thresholds must be positive".into()));
        }
        if self.spo2_min_count == 0 || self.rr_min_count == 0 {
            return Err(CetError::Config("rule counts must be at least 1".into()));
        }
        if self.window_start_hours < 0 || self.window_start_hours >= self.window_end_hours {
            return Err(CetError::Config("label window start must precede its end".into()));
        }
        Ok(())
    }
}

/// Slack on the difference rules (creatinine rise, GCS drop) so that a
/// charted delta of exactly the threshold is not pushed over it by binary
/// rounding, e.g. `1.3 - 1.0 > 0.3` in `f64`.
pub const DELTA_TOLERANCE: f64 = 1e-9;

fn values(events: &[EventRecord], signal: SignalKind) -> impl Iterator<Item = f64> + '_ {
    events.iter().filter(move |e| e.signal == signal).map(|e| e.value)
}

pub fn label_respiratory(window: &[EventRecord], cfg: &CetRuleConfig) -> bool {
    let low_spo2 = values(window, SignalKind::SpO2)
        .filter(|v| *v < cfg.spo2_threshold)
        .count();
    let high_rr = values(window, SignalKind::Rr)
        .filter(|v| *v > cfg.rr_threshold)
        .count();
    low_spo2 >= cfg.spo2_min_count || high_rr >= cfg.rr_min_count
}

pub fn label_hemodynamic(window: &[EventRecord], cfg: &CetRuleConfig) -> bool {
    values(window, SignalKind::Map).any(|v| v < cfg.map_threshold)
        || values(window, SignalKind::Sbp).any(|v| v < cfg.sbp_threshold)
}

pub fn label_renal(baseline: Option<f64>, window: &[EventRecord], cfg: &CetRuleConfig) -> bool {
    let peak = values(window, SignalKind::Creatinine)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    match (baseline, peak) {
        (Some(base), Some(peak)) => peak - base > cfg.creat_delta + DELTA_TOLERANCE && peak > cfg.creat_peak,
        _ => false,
    }
}

pub fn label_neurologic(baseline_gcs: Option<f64>, window: &[EventRecord], cfg: &CetRuleConfig) -> bool {
    if window.iter().any(|e| e.signal == SignalKind::Sedation) {
        return true;
    }
    let lowest =
        values(window, SignalKind::Gcs).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    match (baseline_gcs, lowest) {
        (Some(base), Some(low)) => base - low > cfg.gcs_drop + DELTA_TOLERANCE,
        _ => false,
    }
}

/// Label one stay. `events` must be sorted by charttime.
pub fn label_stay(intime: NaiveDateTime, events: &[EventRecord], cfg: &CetRuleConfig) -> CetLabels {
    let offset = |e: &EventRecord| e.charttime - intime;
    let start = Duration::hours(cfg.window_start_hours);
    let end = Duration::hours(cfg.window_end_hours);
    let feature_end = Duration::hours(FEATURE_WINDOW_HOURS);

    // Events are sorted, so both windows are contiguous runs.
    let lo = events.partition_point(|e| offset(e) < start);
    let hi = events.partition_point(|e| offset(e) < end);
    let window = &events[lo..hi.max(lo)];
    if window.is_empty() {
        return CetLabels::default();
    }

    let b_lo = events.partition_point(|e| offset(e) < Duration::zero());
    let b_hi = events.partition_point(|e| offset(e) < feature_end);
    let baseline_events = &events[b_lo..b_hi.max(b_lo)];
    let baseline_creat = baseline_events
        .iter()
        .rfind(|e| e.signal == SignalKind::Creatinine)
        .map(|e| e.value);
    let baseline_gcs = values(baseline_events, SignalKind::Gcs)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));

    CetLabels {
        respiratory: label_respiratory(window, cfg),
        hemodynamic: label_hemodynamic(window, cfg),
        renal: label_renal(baseline_creat, window, cfg),
        neurologic: label_neurologic(baseline_gcs, window, cfg),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSummary {
    pub stays: usize,
    /// Stays without any event in the label window (labeled all-negative).
    pub empty_window: usize,
    /// Stays whose last event precedes the end of the label window.
    pub ends_before_window: usize,
    pub positives: [usize; 4],
}

impl fmt::Display for LabelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "labels: stays={} empty_window={} ends_before_window_end={}",
            self.stays, self.empty_window, self.ends_before_window
        )?;
        for label in Label::ALL {
            write!(f, " {}={}", label, self.positives[label.index()])?;
        }
        Ok(())
    }
}

pub fn label_cohort(cohort: &Cohort, cfg: &CetRuleConfig) -> (Vec<CetLabels>, LabelSummary) {
    let mut summary = LabelSummary {
        stays: cohort.len(),
        ..Default::default()
    };
    let start = Duration::hours(cfg.window_start_hours);
    let end = Duration::hours(cfg.window_end_hours);
    let labels = cohort
        .iter()
        .map(|(stay, events)| {
            let offsets = events.iter().map(|e| e.charttime - stay.intime);
            if !offsets.clone().any(|o| o >= start && o < end) {
                summary.empty_window += 1;
            }
            if events.last().is_none_or(|e| e.charttime - stay.intime < end) {
                summary.ends_before_window += 1;
            }
            let y = label_stay(stay.intime, events, cfg);
            for label in Label::ALL {
                summary.positives[label.index()] += usize::from(y.get(label));
            }
            y
        })
        .collect();
    (labels, summary)
}

pub fn write_labels<W: std::io::Write>(ids: &[String], labels: &[CetLabels], out: W) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(CetError::LengthMismatch("stay ids vs labels".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stay_id", "respiratory", "hemodynamic", "renal", "neurologic"])?;
    for (id, y) in ids.iter().zip(labels) {
        let mut rec = vec![id.clone()];
        rec.extend(y.as_array().iter().map(|b| u8::from(*b).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `labels.csv` (or `truth.csv`), returning ids and labels in file order.
pub fn read_labels<R: std::io::Read>(input: R) -> Result<(Vec<String>, Vec<CetLabels>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut wanted = vec!["stay_id"];
    wanted.extend(Label::ALL.iter().map(|l| l.name()));
    let cols = wanted
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| CetError::MissingColumn(n.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(rec.get(cols[0]).unwrap_or("").to_string());
        let mut y = [false; 4];
        for (k, slot) in y.iter_mut().enumerate() {
            *slot = match rec.get(cols[k + 1]).unwrap_or("") {
                "0" => false,
                "1" => true,
                other => {
                    return Err(CetError::BadEnum {
                        row: i + 2,
                        field: "label",
                        value: other.to_string(),
                    })
                }
            };
        }
        labels.push(CetLabels::from_array(y));
    }
    Ok((ids, labels))
}
