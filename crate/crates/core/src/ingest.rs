//! Stay and event table parsing plus cohort selection.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::featurize::compute_age;

pub const STAY_COLUMNS: [&str; 7] = [
    "stay_id",
    "subject_id",
    "hadm_id",
    "intime",
    "anchor_age",
    "anchor_year",
    "gender",
];
pub const EVENT_COLUMNS: [&str; 4] = ["stay_id", "charttime", "signal", "value"];

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

pub const ADULT_AGE: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::F => "F",
            Gender::M => "M",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StayRecord {
    pub stay_id: String,
    pub subject_id: String,
    pub hadm_id: String,
    pub intime: NaiveDateTime,
    pub anchor_age: u32,
    pub anchor_year: i32,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalKind {
    SpO2,
    Sbp,
    Map,
    Hr,
    Rr,
    Creatinine,
    Lactate,
    Ph,
    Gcs,
    Sedation,
}

impl SignalKind {
    pub const ALL: [SignalKind; 10] = [
        SignalKind::SpO2,
        SignalKind::Sbp,
        SignalKind::Map,
        SignalKind::Hr,
        SignalKind::Rr,
        SignalKind::Creatinine,
        SignalKind::Lactate,
        SignalKind::Ph,
        SignalKind::Gcs,
        SignalKind::Sedation,
    ];

    /// The five featurized vital signs, in feature order.
    pub const VITALS: [SignalKind; 5] = [
        SignalKind::SpO2,
        SignalKind::Sbp,
        SignalKind::Map,
        SignalKind::Hr,
        SignalKind::Rr,
    ];

    pub fn token(self) -> &'static str {
        match self {
            SignalKind::SpO2 => "spo2",
            SignalKind::Sbp => "sbp",
            SignalKind::Map => "map",
            SignalKind::Hr => "hr",
            SignalKind::Rr => "rr",
            SignalKind::Creatinine => "creatinine",
            SignalKind::Lactate => "lactate",
            SignalKind::Ph => "ph",
            SignalKind::Gcs => "gcs",
            SignalKind::Sedation => "sedation",
        }
    }

    pub fn is_vital(self) -> bool {
        Self::VITALS.contains(&self)
    }

    pub fn is_lab(self) -> bool {
        matches!(
            self,
            SignalKind::Creatinine | SignalKind::Lactate | SignalKind::Ph
        )
    }
}

impl FromStr for SignalKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let lower = s.trim().to_ascii_lowercase();
        SignalKind::ALL
            .iter()
            .copied()
            .find(|k| k.token() == lower)
            .ok_or(())
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub stay_id: String,
    pub charttime: NaiveDateTime,
    pub signal: SignalKind,
    pub value: f64,
}

/// Retained stays in ascending `stay_id` order, with each stay's events
/// sorted by charttime at the same index in `events`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    pub stays: Vec<StayRecord>,
    pub events: Vec<Vec<EventRecord>>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.stays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StayRecord, &[EventRecord])> {
        self.stays.iter().zip(self.events.iter().map(Vec::as_slice))
    }
}

/// Exclusion counts per reason. A stay is counted under the first rule it fails.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CohortSummary {
    pub input_stays: usize,
    pub retained: usize,
    pub not_first_stay: usize,
    pub under_age: usize,
    pub no_vitals: usize,
    pub no_labs: usize,
    pub orphan_events: usize,
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cohort: input={} retained={} excluded_not_first_stay={} excluded_under_18={} \
             excluded_no_vitals={} excluded_no_labs={} orphan_events={}",
            self.input_stays,
            self.retained,
            self.not_first_stay,
            self.under_age,
            self.no_vitals,
            self.no_labs,
            self.orphan_events
        )
    }
}

/// Accepts `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DD HH:MM`, or a bare date (midnight).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
        .ok()
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn column_positions(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| CetError::MissingColumn((*name).to_string()))
        })
        .collect()
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

/// Parse `stays.csv`. Row numbers in errors count the header as row 1.
pub fn parse_stays<R: Read>(reader: R) -> Result<Vec<StayRecord>> {
    let mut rdr = csv_reader(reader);
    let cols = column_positions(rdr.headers()?, &STAY_COLUMNS)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |j: usize| rec.get(cols[j]).unwrap_or("");
        let intime = parse_timestamp(field(3)).ok_or_else(|| CetError::BadTimestamp {
            row,
            value: field(3).to_string(),
        })?;
        let anchor_age: u32 = field(4).parse().map_err(|_| CetError::BadValue {
            row,
            value: field(4).to_string(),
        })?;
        let anchor_year: i32 = field(5).parse().map_err(|_| CetError::BadValue {
            row,
            value: field(5).to_string(),
        })?;
        let gender = match field(6) {
            "F" | "f" => Gender::F,
            "M" | "m" => Gender::M,
            other => {
                return Err(CetError::BadEnum {
                    row,
                    field: "gender",
                    value: other.to_string(),
                })
            }
        };
        let stay_id = field(0).to_string();
        if !seen.insert(stay_id.clone()) {
            return Err(CetError::DuplicateStayId(stay_id));
        }
        out.push(StayRecord {
            stay_id,
            subject_id: field(1).to_string(),
            hadm_id: field(2).to_string(),
            intime,
            anchor_age,
            anchor_year,
            gender,
        });
    }
    Ok(out)
}

/// Streaming iterator over `events.csv` rows, in file order.
pub struct EventStream<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    cols: Vec<usize>,
    row: usize,
}

impl<R: Read> Iterator for EventStream<R> {
    type Item = Result<EventRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        self.row += 1;
        let row = self.row;
        Some(rec.map_err(CetError::from).and_then(|rec| {
            let field = |j: usize| rec.get(self.cols[j]).unwrap_or("");
            let charttime = parse_timestamp(field(1)).ok_or_else(|| CetError::BadTimestamp {
                row,
                value: field(1).to_string(),
            })?;
            let signal: SignalKind = field(2).parse().map_err(|_| CetError::BadSignalToken {
                row,
                value: field(2).to_string(),
            })?;
            let value: f64 = field(3)
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CetError::BadValue {
                    row,
                    value: field(3).to_string(),
                })?;
            Ok(EventRecord {
                stay_id: field(0).to_string(),
                charttime,
                signal,
                value,
            })
        }))
    }
}

/// Parse `events.csv` lazily; the file is never held in memory as a whole.
pub fn parse_events<R: Read>(reader: R) -> Result<EventStream<R>> {
    let mut rdr = csv_reader(reader);
    let cols = column_positions(rdr.headers()?, &EVENT_COLUMNS)?;
    Ok(EventStream {
        records: rdr.into_records(),
        cols,
        row: 1,
    })
}

/// Apply the cohort rules: first ICU stay per hospital admission (earliest
/// intime, ties by `stay_id`), adult at admission, at least one vital-sign
/// event and at least one laboratory event anywhere in the stay.
pub fn select_cohort<I>(stays: Vec<StayRecord>, events: I) -> Result<(Cohort, CohortSummary)>
where
    I: IntoIterator<Item = Result<EventRecord>>,
{
    let mut summary = CohortSummary {
        input_stays: stays.len(),
        ..Default::default()
    };

    let index: HashMap<&str, usize> = stays
        .iter()
        .enumerate()
        .map(|(i, s)| (s.stay_id.as_str(), i))
        .collect();
    let mut per_stay: Vec<Vec<EventRecord>> = vec![Vec::new(); stays.len()];
    for ev in events {
        let ev = ev?;
        match index.get(ev.stay_id.as_str()) {
            Some(&i) => per_stay[i].push(ev),
            None => summary.orphan_events += 1,
        }
    }

    let mut first_of_admission: HashMap<&str, usize> = HashMap::new();
    for (i, s) in stays.iter().enumerate() {
        first_of_admission
            .entry(s.hadm_id.as_str())
            .and_modify(|cur| {
                let c = &stays[*cur];
                if (s.intime, &s.stay_id) < (c.intime, &c.stay_id) {
                    *cur = i;
                }
            })
            .or_insert(i);
    }

    let mut keep = Vec::new();
    for (i, s) in stays.iter().enumerate() {
        if first_of_admission[s.hadm_id.as_str()] != i {
            summary.not_first_stay += 1;
            continue;
        }
        let adult = compute_age(s.anchor_age, s.anchor_year, s.intime)
            .map(|age| age >= ADULT_AGE)
            .unwrap_or(false);
        if !adult {
            summary.under_age += 1;
            continue;
        }
        if !per_stay[i].iter().any(|e| e.signal.is_vital()) {
            summary.no_vitals += 1;
            continue;
        }
        if !per_stay[i].iter().any(|e| e.signal.is_lab()) {
            summary.no_labs += 1;
            continue;
        }
        keep.push(i);
    }
    drop(first_of_admission);
    drop(index);

    keep.sort_by(|&a, &b| stays[a].stay_id.cmp(&stays[b].stay_id));
    let mut stay_slots: Vec<Option<StayRecord>> = stays.into_iter().map(Some).collect();
    let mut cohort = Cohort::default();
    for i in keep {
        let mut evs = std::mem::take(&mut per_stay[i]);
        evs.sort_by_key(|e| e.charttime);
        cohort
            .stays
            .push(stay_slots[i].take().expect("stay visited once"));
        cohort.events.push(evs);
    }
    summary.retained = cohort.len();
    Ok((cohort, summary))
}

/// Write the retained cohort back out in the ingest schemas.
pub fn write_cohort<W1: std::io::Write, W2: std::io::Write>(
    cohort: &Cohort,
    stays_out: W1,
    events_out: W2,
) -> Result<()> {
    let mut ws = csv::Writer::from_writer(stays_out);
    ws.write_record(STAY_COLUMNS)?;
    let mut we = csv::Writer::from_writer(events_out);
    we.write_record(EVENT_COLUMNS)?;
    for (s, evs) in cohort.iter() {
        ws.write_record([
            s.stay_id.clone(),
            s.subject_id.clone(),
            s.hadm_id.clone(),
            format_timestamp(&s.intime),
            s.anchor_age.to_string(),
            s.anchor_year.to_string(),
            s.gender.to_string(),
        ])?;
        for e in evs {
            we.write_record([
                e.stay_id.clone(),
                format_timestamp(&e.charttime),
                e.signal.token().to_string(),
                e.value.to_string(),
            ])?;
        }
    }
    ws.flush()?;
    we.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "stay_id,subject_id,hadm_id,intime,anchor_age,anchor_year,gender\n";

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn stay(id: &str, hadm: &str, intime: &str, age: u32, year: i32) -> StayRecord {
        StayRecord {
            stay_id: id.into(),
            subject_id: "p".into(),
            hadm_id: hadm.into(),
            intime: ts(intime),
            anchor_age: age,
            anchor_year: year,
            gender: Gender::F,
        }
    }

    fn ev(id: &str, t: &str, signal: SignalKind, value: f64) -> Result<EventRecord> {
        Ok(EventRecord {
            stay_id: id.into(),
            charttime: ts(t),
            signal,
            value,
        })
    }

    #[test]
    fn parses_single_stay() {
        let csv = format!("{HEADER}s1,p1,h1,2150-01-01 00:00:00,50,2150,F\n");
        let stays = parse_stays(csv.as_bytes()).unwrap();
        assert_eq!(stays.len(), 1);
        assert_eq!(stays[0].gender, Gender::F);
        assert_eq!(stays[0].intime, ts("2150-01-01 00:00"));
    }

    #[test]
    fn crlf_and_optional_seconds() {
        let csv = "stay_id,subject_id,hadm_id,intime,anchor_age,anchor_year,gender\r\n\
                   s1,p1,h1,2150-01-01 06:30,50,2150,M\r\n";
        let stays = parse_stays(csv.as_bytes()).unwrap();
        assert_eq!(stays[0].intime, ts("2150-01-01 06:30:00"));
    }

    #[test]
    fn unknown_gender_is_rejected_with_row() {
        let csv = format!("{HEADER}s1,p1,h1,2150-01-01 00:00:00,50,2150,X\n");
        match parse_stays(csv.as_bytes()) {
            Err(CetError::BadEnum { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_stay_id_is_rejected() {
        let csv = format!(
            "{HEADER}s1,p1,h1,2150-01-01 00:00:00,50,2150,F\ns1,p2,h2,2150-01-02 00:00:00,40,2150,M\n"
        );
        assert!(matches!(
            parse_stays(csv.as_bytes()),
            Err(CetError::DuplicateStayId(id)) if id == "s1"
        ));
    }

    #[test]
    fn missing_column_and_bad_timestamp() {
        let csv = "stay_id,subject_id,hadm_id,intime,anchor_age,gender\n";
        assert!(matches!(
            parse_stays(csv.as_bytes()),
            Err(CetError::MissingColumn(c)) if c == "anchor_year"
        ));
        let csv = format!("{HEADER}s1,p1,h1,yesterday,50,2150,F\n");
        assert!(matches!(
            parse_stays(csv.as_bytes()),
            Err(CetError::BadTimestamp { row: 2, .. })
        ));
    }

    #[test]
    fn parses_event_rows() {
        let csv =
            "stay_id,charttime,signal,value\ns1,2150-01-01 00:30,spo2,94\ns1,2150-01-01 00:40,MAP,70.5\n";
        let evs: Vec<_> = parse_events(csv.as_bytes())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(evs[0].signal, SignalKind::SpO2);
        assert_eq!(evs[0].value, 94.0);
        assert_eq!(evs[0].charttime, ts("2150-01-01 00:30:00"));
        assert_eq!(evs[1].signal, SignalKind::Map);
    }

    #[test]
    fn bad_signal_and_nan_are_rejected() {
        let csv = "stay_id,charttime,signal,value\ns1,2150-01-01 00:30,xyz,94\n";
        let mut it = parse_events(csv.as_bytes()).unwrap();
        assert!(matches!(
            it.next(),
            Some(Err(CetError::BadSignalToken { row: 2, .. }))
        ));

        let csv = "stay_id,charttime,signal,value\ns1,2150-01-01 00:30,hr,80\ns1,2150-01-01 00:30,hr,NaN\n";
        let mut it = parse_events(csv.as_bytes()).unwrap();
        assert!(it.next().unwrap().is_ok());
        assert!(matches!(it.next(), Some(Err(CetError::BadValue { row: 3, .. }))));
        let csv = "stay_id,charttime,signal,value\ns1,2150-01-01 00:30,hr,inf\n";
        let mut it = parse_events(csv.as_bytes()).unwrap();
        assert!(matches!(it.next(), Some(Err(CetError::BadValue { .. }))));
    }

    fn full_events(id: &str) -> Vec<Result<EventRecord>> {
        vec![
            ev(id, "2150-07-01 02:00", SignalKind::Hr, 80.0),
            ev(id, "2150-07-01 01:00", SignalKind::Creatinine, 1.0),
        ]
    }

    #[test]
    fn keeps_only_first_stay_of_admission() {
        let stays = vec![
            stay("b", "h1", "2150-07-02 00:00", 50, 2150),
            stay("a", "h1", "2150-07-01 00:00", 50, 2150),
        ];
        let mut events = full_events("a");
        events.extend(full_events("b"));
        let (cohort, summary) = select_cohort(stays, events).unwrap();
        assert_eq!(cohort.len(), 1);
        assert_eq!(cohort.stays[0].stay_id, "a");
        assert_eq!(summary.not_first_stay, 1);
    }

    #[test]
    fn identical_intime_breaks_ties_by_stay_id() {
        let stays = vec![
            stay("z", "h1", "2150-07-01 00:00", 50, 2150),
            stay("y", "h1", "2150-07-01 00:00", 50, 2150),
        ];
        let mut events = full_events("z");
        events.extend(full_events("y"));
        let (cohort, _) = select_cohort(stays, events).unwrap();
        assert_eq!(cohort.stays[0].stay_id, "y");
    }

    #[test]
    fn minors_are_excluded() {
        // 0.1 years is 36.5 days: 2150-07-01 minus 37 days is 2150-05-25.
        let stays = vec![
            stay("young", "h1", "2150-05-25 00:00", 18, 2150),
            stay("exact", "h2", "2150-07-01 00:00", 18, 2150),
        ];
        let mut events = full_events("young");
        events.extend(full_events("exact"));
        let (cohort, summary) = select_cohort(stays, events).unwrap();
        let age = compute_age(18, 2150, ts("2150-05-25 00:00")).unwrap();
        assert!(age < 17.9 && age > 17.89);
        assert_eq!(summary.under_age, 1);
        assert_eq!(cohort.stays.len(), 1);
        assert_eq!(cohort.stays[0].stay_id, "exact");
    }

    #[test]
    fn three_stay_fixture_requires_vitals_and_labs() {
        // s1: vitals + labs, s2: vitals only, s3: labs only.
        let stays = vec![
            stay("s1", "h1", "2150-07-01 00:00", 60, 2150),
            stay("s2", "h2", "2150-07-01 00:00", 60, 2150),
            stay("s3", "h3", "2150-07-01 00:00", 60, 2150),
        ];
        let events = vec![
            ev("s1", "2150-07-01 01:00", SignalKind::SpO2, 97.0),
            ev("s1", "2150-07-04 01:00", SignalKind::Ph, 7.4),
            ev("s2", "2150-07-01 01:00", SignalKind::Rr, 16.0),
            ev("s2", "2150-07-01 02:00", SignalKind::Gcs, 15.0),
            ev("s3", "2150-07-01 01:00", SignalKind::Lactate, 1.1),
            ev("nobody", "2150-07-01 01:00", SignalKind::Hr, 70.0),
        ];
        let (cohort, summary) = select_cohort(stays, events).unwrap();
        let ids: Vec<_> = cohort.stays.iter().map(|s| s.stay_id.as_str()).collect();
        assert_eq!(ids, ["s1"]);
        assert_eq!(summary.no_labs, 1);
        assert_eq!(summary.no_vitals, 1);
        assert_eq!(summary.orphan_events, 1);
    }

    #[test]
    fn events_sorted_and_selection_idempotent() {
        let stays = vec![
            stay("s2", "h2", "2150-07-01 00:00", 60, 2150),
            stay("s1", "h1", "2150-07-01 00:00", 60, 2150),
        ];
        let events = vec![
            ev("s1", "2150-07-01 05:00", SignalKind::Hr, 70.0),
            ev("s1", "2150-07-01 01:00", SignalKind::Creatinine, 1.0),
            ev("s2", "2150-07-01 03:00", SignalKind::Hr, 71.0),
            ev("s2", "2150-06-30 23:00", SignalKind::Creatinine, 1.0),
        ];
        let (cohort, _) = select_cohort(stays, events).unwrap();
        assert_eq!(cohort.stays[0].stay_id, "s1");
        for evs in &cohort.events {
            assert!(evs.windows(2).all(|w| w[0].charttime <= w[1].charttime));
        }
        let again_events: Vec<_> = cohort.events.iter().flatten().cloned().map(Ok).collect();
        let (again, _) = select_cohort(cohort.stays.clone(), again_events).unwrap();
        assert_eq!(again, cohort);
    }
}
