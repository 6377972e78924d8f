//! Synthetic stays and events in the ingest schema.
//!
//! Every stay draws a latent standard-normal propensity per label. The label
//! is positive when `z + e > t`, with independent noise `e ~ N(0, 1)` and
//! `t` set so that the marginal rate equals the target prevalence. The
//! first-day features carry `z` scaled by the signal strength, one planted
//! feature per label:
//!
//! | label        | planted feature       | mechanism                      |
//! |--------------|-----------------------|--------------------------------|
//! | respiratory  | `rr_max`              | one high respiratory-rate spike |
//! | hemodynamic  | `map_min`             | one low MAP reading            |
//! | renal        | `creatinine_latest`   | shift of the last creatinine   |
//! | neurologic   | `hr_max`              | one heart-rate spike           |
//!
//! Hours 24–72 then contain threshold-crossing events exactly for the
//! positive labels, so the labeler reproduces the intended labels.

use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CetError, Result};
use crate::featurize::{aggregate_window, build_feature_vector, FeatureVector};
use crate::ingest::{
    format_timestamp, EventRecord, Gender, SignalKind, StayRecord, EVENT_COLUMNS, STAY_COLUMNS,
};
use crate::labeler::{label_stay, write_labels, CetLabels, CetRuleConfig, Label};
use crate::seed::rng_for;

/// Probability that a signal is absent from a stay's first 24 hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Missingness {
    pub spo2: f64,
    pub sbp: f64,
    pub map: f64,
    pub hr: f64,
    pub rr: f64,
    pub creatinine: f64,
    pub lactate: f64,
    pub ph: f64,
}

impl Default for Missingness {
    fn default() -> Self {
        Missingness {
            spo2: 0.0,
            sbp: 0.0,
            map: 0.0,
            hr: 0.0,
            rr: 0.0,
            creatinine: 0.0,
            lactate: 0.46,
            ph: 0.44,
        }
    }
}

impl Missingness {
    fn rate(&self, s: SignalKind) -> f64 {
        match s {
            SignalKind::SpO2 => self.spo2,
            SignalKind::Sbp => self.sbp,
            SignalKind::Map => self.map,
            SignalKind::Hr => self.hr,
            SignalKind::Rr => self.rr,
            SignalKind::Creatinine => self.creatinine,
            SignalKind::Lactate => self.lactate,
            SignalKind::Ph => self.ph,
            SignalKind::Gcs | SignalKind::Sedation => 0.0,
        }
    }

    fn all(&self) -> [f64; 8] {
        [
            self.spo2,
            self.sbp,
            self.map,
            self.hr,
            self.rr,
            self.creatinine,
            self.lactate,
            self.ph,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stays: usize,
    pub seed: u64,
    /// Target rate of respiratory, hemodynamic, renal, neurologic.
    pub prevalence: [f64; 4],
    pub signal_strength: f64,
    pub missingness: Missingness,
    /// Probability that a stay's hours 24–72 follow the opposite pattern
    /// from its intended label (per label).
    pub label_noise: f64,
    pub vital_every_hours: u32,
    pub creatinine_every_hours: u32,
    pub gcs_every_hours: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_stays: 1000,
            seed: crate::seed::DEFAULT_SEED,
            prevalence: [0.3, 0.25, 0.15, 0.2],
            signal_strength: 1.0,
            missingness: Missingness::default(),
            label_noise: 0.0,
            vital_every_hours: 1,
            creatinine_every_hours: 12,
            gcs_every_hours: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stays < 10 {
            return Err(CetError::Config("n_stays must be at least 10".into()));
        }
        if self.prevalence.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(CetError::Config("prevalences must lie in (0, 1)".into()));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(CetError::Config("signal_strength must be non-negative".into()));
        }
        if self.missingness.all().iter().any(|m| !(*m >= 0.0 && *m < 1.0)) {
            return Err(CetError::Config("missingness rates must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(CetError::Config("label_noise must lie in [0, 1]".into()));
        }
        if self.vital_every_hours == 0 || self.creatinine_every_hours == 0 || self.gcs_every_hours == 0 {
            return Err(CetError::Config("event cadences must be positive".into()));
        }
        Ok(())
    }
}

/// One generated stay with its events (sorted by time) and intended labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStay {
    pub stay: StayRecord,
    pub events: Vec<EventRecord>,
    pub truth: CetLabels,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn gauss(rng: &mut ChaCha8Rng, n: &Normal) -> f64 {
    // Inverse-CDF sampling; the open interval keeps the quantile finite.
    let u: f64 = rng.gen_range(f64::EPSILON..1.0 - f64::EPSILON);
    n.inverse_cdf(u)
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

pub fn stay_id(i: usize) -> String {
    format!("{}", 30_000_000 + i)
}

struct Builder<'a> {
    id: String,
    intime: NaiveDateTime,
    events: Vec<EventRecord>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn push(&mut self, hour: u32, signal: SignalKind, value: f64) {
        let minute = self.rng.gen_range(0..50);
        self.events.push(EventRecord {
            stay_id: self.id.clone(),
            charttime: self.intime + Duration::hours(i64::from(hour)) + Duration::minutes(minute),
            signal,
            value,
        });
    }
}

/// Deterministic in `(cfg.seed, index)` alone.
pub fn generate_stay(cfg: &SynthConfig, index: usize) -> SynthStay {
    let normal = std_normal();
    let mut rng = rng_for(cfg.seed, "synth", index as u64);
    let rng = &mut rng;
    let s = cfg.signal_strength;

    let mut z = [0.0; 4];
    let mut truth = [false; 4];
    for l in 0..4 {
        z[l] = gauss(rng, &normal);
        let e = gauss(rng, &normal);
        let t = std::f64::consts::SQRT_2 * normal.inverse_cdf(1.0 - cfg.prevalence[l]);
        truth[l] = z[l] + e > t;
    }
    let realized: [bool; 4] = std::array::from_fn(|l| {
        let flip = cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise);
        truth[l] != flip
    });

    let start = NaiveDate::from_ymd_opt(2150, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    let intime = start + Duration::minutes(rng.gen_range(0..30 * 525_600));
    let stay = StayRecord {
        stay_id: stay_id(index),
        subject_id: format!("{}", 10_000_000 + index),
        hadm_id: format!("{}", 20_000_000 + index),
        intime,
        anchor_age: rng.gen_range(20..=89),
        anchor_year: intime.year(),
        gender: if rng.gen_bool(0.5) { Gender::F } else { Gender::M },
    };

    let mut b = Builder {
        id: stay.stay_id.clone(),
        intime,
        events: Vec::new(),
        rng,
    };

    // Per-stay baselines.
    let spo2 = b.rng.gen_range(94.0..99.0);
    let sbp = b.rng.gen_range(100.0..140.0);
    let map = b.rng.gen_range(70.0..100.0);
    let hr = b.rng.gen_range(60.0..100.0);
    let rr = b.rng.gen_range(12.0..20.0);
    let creat = b.rng.gen_range(0.6..1.1);
    let present: Vec<bool> = SignalKind::ALL
        .iter()
        .map(|k| {
            let m = cfg.missingness.rate(*k);
            !(m > 0.0 && b.rng.gen_bool(m))
        })
        .collect();
    let has = |k: SignalKind| present[SignalKind::ALL.iter().position(|x| *x == k).unwrap()];

    // Hours 0-24.
    let vit = cfg.vital_every_hours;
    let hours: Vec<u32> = (0..24).step_by(vit as usize).collect();
    let spike_rr = b.rng.gen_range(0..hours.len());
    let dip_map = b.rng.gen_range(0..hours.len());
    let spike_hr = b.rng.gen_range(0..hours.len());
    for (k, &h) in hours.iter().enumerate() {
        let n = gauss(b.rng, &normal);
        if has(SignalKind::SpO2) {
            b.push(h, SignalKind::SpO2, round_to((spo2 + n).clamp(85.0, 100.0), 1));
        }
        let n = gauss(b.rng, &normal);
        if has(SignalKind::Sbp) {
            b.push(h, SignalKind::Sbp, round_to(sbp + 6.0 * n, 1));
        }
        let n = gauss(b.rng, &normal);
        let mut v = map + 5.0 * n;
        if k == dip_map {
            v = map - 5.0 - 6.0 * s * z[1] + gauss(b.rng, &normal);
        }
        if has(SignalKind::Map) {
            b.push(h, SignalKind::Map, round_to(v.max(20.0), 1));
        }
        let n = gauss(b.rng, &normal);
        let mut v = hr + 5.0 * n;
        if k == spike_hr {
            v = hr + 8.0 + 10.0 * s * z[3] + 2.0 * gauss(b.rng, &normal);
        }
        if has(SignalKind::Hr) {
            b.push(h, SignalKind::Hr, round_to(v.max(20.0), 1));
        }
        let n = gauss(b.rng, &normal);
        let mut v = rr + 1.5 * n;
        if k == spike_rr {
            v = rr + 4.0 + 2.5 * s * z[0] + gauss(b.rng, &normal);
        }
        if has(SignalKind::Rr) {
            b.push(h, SignalKind::Rr, round_to(v.max(4.0), 1));
        }
    }
    let creat_hours: Vec<u32> = (0..24).step_by(cfg.creatinine_every_hours as usize).collect();
    let mut baseline_creat = None;
    for (k, &h) in creat_hours.iter().enumerate() {
        let mut v = creat + 0.05 * gauss(b.rng, &normal);
        if k + 1 == creat_hours.len() {
            v = creat + 0.15 * s * z[2] + 0.05 * gauss(b.rng, &normal);
        }
        let v = round_to(v.max(0.2), 2);
        if has(SignalKind::Creatinine) {
            b.push(h, SignalKind::Creatinine, v);
            baseline_creat = Some(v);
        }
    }
    if has(SignalKind::Lactate) {
        let v = round_to(b.rng.gen_range(0.8..2.5), 1);
        b.push(2, SignalKind::Lactate, v);
    }
    if has(SignalKind::Ph) {
        let v = round_to(b.rng.gen_range(7.32..7.45), 2);
        b.push(2, SignalKind::Ph, v);
    }
    let gcs_base = if b.rng.gen_bool(0.8) { 15.0 } else { 14.0 };
    for h in (0..24).step_by(cfg.gcs_every_hours as usize) {
        let v = if h == 0 {
            gcs_base
        } else {
            gcs_base - f64::from(b.rng.gen_range(0..2u8))
        };
        b.push(h, SignalKind::Gcs, v);
    }

    // Hours 24-72: values stay clear of every threshold except where a
    // positive label plants its crossing.
    let window: Vec<u32> = (24..72).step_by(vit as usize).collect();
    let mut spo2_w: Vec<f64> = Vec::new();
    let mut rr_w: Vec<f64> = Vec::new();
    let mut map_w: Vec<f64> = Vec::new();
    let mut sbp_w: Vec<f64> = Vec::new();
    for _ in &window {
        spo2_w.push((spo2 + gauss(b.rng, &normal)).clamp(91.0, 100.0));
        rr_w.push((rr + 1.5 * gauss(b.rng, &normal)).clamp(8.0, 28.0));
        map_w.push((map + 5.0 * gauss(b.rng, &normal)).clamp(67.0, 130.0));
        sbp_w.push((sbp + 6.0 * gauss(b.rng, &normal)).clamp(92.0, 190.0));
    }
    if realized[Label::Respiratory.index()] {
        let slots = sample(b.rng, window.len(), 2.min(window.len()));
        let use_spo2 = b.rng.gen_bool(0.5);
        for k in slots.iter() {
            if use_spo2 {
                spo2_w[k] = b.rng.gen_range(82.0..89.0);
            } else {
                rr_w[k] = b.rng.gen_range(32.0..40.0);
            }
        }
    }
    if realized[Label::Hemodynamic.index()] {
        let k = b.rng.gen_range(0..window.len());
        if b.rng.gen_bool(0.7) {
            map_w[k] = b.rng.gen_range(50.0..62.0);
        } else {
            sbp_w[k] = b.rng.gen_range(75.0..87.0);
        }
    }
    for (k, &h) in window.iter().enumerate() {
        b.push(h, SignalKind::SpO2, round_to(spo2_w[k], 1));
        b.push(h, SignalKind::Sbp, round_to(sbp_w[k], 1));
        b.push(h, SignalKind::Map, round_to(map_w[k], 1));
        let v = round_to(hr + 5.0 * gauss(b.rng, &normal), 1);
        b.push(h, SignalKind::Hr, v);
        b.push(h, SignalKind::Rr, round_to(rr_w[k], 1));
    }

    // One reading past the label window, so the stay outlasts it.
    let v = round_to(hr + 5.0 * gauss(b.rng, &normal), 1);
    b.push(72, SignalKind::Hr, v);

    let creat_window: Vec<u32> = (24..72).step_by(cfg.creatinine_every_hours as usize).collect();
    let base = baseline_creat.unwrap_or(creat);
    let renal_slot = b.rng.gen_range(0..creat_window.len());
    for (k, &h) in creat_window.iter().enumerate() {
        let v = if realized[Label::Renal.index()] && k == renal_slot {
            (base + b.rng.gen_range(0.5..1.0)).max(b.rng.gen_range(1.5..2.0))
        } else {
            base + b.rng.gen_range(-0.1..0.2)
        };
        b.push(h, SignalKind::Creatinine, round_to(v.max(0.2), 2));
    }

    let gcs_window: Vec<u32> = (24..72).step_by(cfg.gcs_every_hours as usize).collect();
    let neuro_slot = b.rng.gen_range(0..gcs_window.len());
    let sedated = realized[Label::Neurologic.index()] && b.rng.gen_bool(0.2);
    for (k, &h) in gcs_window.iter().enumerate() {
        let v = if realized[Label::Neurologic.index()] && !sedated && k == neuro_slot {
            gcs_base - f64::from(b.rng.gen_range(3..=6u8))
        } else {
            gcs_base - f64::from(b.rng.gen_range(0..2u8))
        };
        b.push(h, SignalKind::Gcs, v);
    }
    if sedated {
        let h = gcs_window[neuro_slot];
        b.push(h, SignalKind::Sedation, 1.0);
    }

    let mut events = b.events;
    events.sort_by_key(|e| e.charttime);
    SynthStay {
        stay,
        events,
        truth: CetLabels::from_array(truth),
    }
}

/// Write `stays.csv`, `events.csv` and `truth.csv` contents. Stays are
/// generated in parallel chunks and written in `stay_id` order.
pub fn write_cohort<A: Write, B: Write, C: Write>(
    cfg: &SynthConfig,
    stays_out: A,
    events_out: B,
    truth_out: C,
) -> Result<()> {
    cfg.validate()?;
    let mut ws = csv::Writer::from_writer(stays_out);
    ws.write_record(STAY_COLUMNS)?;
    let mut we = csv::Writer::from_writer(events_out);
    we.write_record(EVENT_COLUMNS)?;
    let mut ids = Vec::with_capacity(cfg.n_stays);
    let mut truth = Vec::with_capacity(cfg.n_stays);
    const CHUNK: usize = 256;
    for chunk_start in (0..cfg.n_stays).step_by(CHUNK) {
        let end = (chunk_start + CHUNK).min(cfg.n_stays);
        let chunk: Vec<SynthStay> = (chunk_start..end)
            .into_par_iter()
            .map(|i| generate_stay(cfg, i))
            .collect();
        for g in chunk {
            let s = &g.stay;
            ws.write_record([
                s.stay_id.as_str(),
                s.subject_id.as_str(),
                s.hadm_id.as_str(),
                &format_timestamp(&s.intime),
                &s.anchor_age.to_string(),
                &s.anchor_year.to_string(),
                &s.gender.to_string(),
            ])?;
            for e in &g.events {
                we.write_record([
                    e.stay_id.as_str(),
                    &format_timestamp(&e.charttime),
                    e.signal.token(),
                    &e.value.to_string(),
                ])?;
            }
            ids.push(g.stay.stay_id);
            truth.push(g.truth);
        }
    }
    ws.flush()?;
    we.flush()?;
    write_labels(&ids, &truth, truth_out)
}

/// The three tables as in-memory CSV bytes: stays, events, truth.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    write_cohort(cfg, &mut a, &mut b, &mut c)?;
    Ok((a, b, c))
}

/// Features, labeler output and intended labels without materializing the
/// event tables. Every generated stay passes the cohort rules, so this
/// matches running the CSV pipeline on [`generate_cohort`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub labels: Vec<CetLabels>,
    pub truth: Vec<CetLabels>,
}

pub fn generate_dataset(cfg: &SynthConfig, rules: &CetRuleConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let rows: Vec<(String, FeatureVector, CetLabels, CetLabels)> = (0..cfg.n_stays)
        .into_par_iter()
        .map(|i| {
            let g = generate_stay(cfg, i);
            let f = build_feature_vector(&g.stay, &aggregate_window(&g.events, g.stay.intime))?;
            let y = label_stay(g.stay.intime, &g.events, rules);
            Ok((g.stay.stay_id, f, y, g.truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SynthDataset {
        ids: Vec::with_capacity(rows.len()),
        features: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
        truth: Vec::with_capacity(rows.len()),
    };
    for (id, f, y, t) in rows {
        out.ids.push(id);
        out.features.push(f);
        out.labels.push(y);
        out.truth.push(t);
    }
    Ok(out)
}
