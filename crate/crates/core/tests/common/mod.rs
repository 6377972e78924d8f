#![allow(dead_code)]

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cetpred::featurize::{feature_index, FeatureVector, N_FEATURES};
use cetpred::ingest::{EventRecord, SignalKind};
use cetpred::labeler::{CetLabels, CetRuleConfig};

pub fn intime() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2150, 3, 1)
        .unwrap()
        .and_hms_opt(8, 0, 0)
        .unwrap()
}

/// Event `minutes` after intime.
pub fn ev(minutes: i64, signal: SignalKind, value: f64) -> EventRecord {
    EventRecord {
        stay_id: "1".into(),
        charttime: intime() + Duration::minutes(minutes),
        signal,
        value,
    }
}

pub fn at_hour(hour: i64, signal: SignalKind, value: f64) -> EventRecord {
    ev(hour * 60, signal, value)
}

pub fn sorted(mut events: Vec<EventRecord>) -> Vec<EventRecord> {
    events.sort_by_key(|e| e.charttime);
    events
}

/// Thousandths, so that deltas compare exactly on charted decimals.
fn milli(v: f64) -> i64 {
    (v * 1000.0).round() as i64
}

/// Naive rule evaluator: every rule rescans the whole event list and
/// compares decimal deltas in integer thousandths.
pub fn oracle_labels(intime: NaiveDateTime, events: &[EventRecord], cfg: &CetRuleConfig) -> CetLabels {
    let secs = |e: &EventRecord| (e.charttime - intime).num_seconds();
    let in_window =
        |e: &EventRecord| secs(e) >= cfg.window_start_hours * 3600 && secs(e) < cfg.window_end_hours * 3600;
    let in_baseline = |e: &EventRecord| secs(e) >= 0 && secs(e) < 24 * 3600;

    let mut low_spo2 = 0;
    let mut high_rr = 0;
    let mut hemo = false;
    let mut sedation = false;
    let mut peak: Option<f64> = None;
    let mut low_gcs: Option<f64> = None;
    for e in events.iter().filter(|e| in_window(e)) {
        match e.signal {
            SignalKind::SpO2 if e.value < cfg.spo2_threshold => low_spo2 += 1,
            SignalKind::Rr if e.value > cfg.rr_threshold => high_rr += 1,
            SignalKind::Map if e.value < cfg.map_threshold => hemo = true,
            SignalKind::Sbp if e.value < cfg.sbp_threshold => hemo = true,
            SignalKind::Creatinine => peak = Some(peak.map_or(e.value, |p: f64| p.max(e.value))),
            SignalKind::Gcs => low_gcs = Some(low_gcs.map_or(e.value, |g: f64| g.min(e.value))),
            SignalKind::Sedation => sedation = true,
            _ => {}
        }
    }

    let mut base_creat: Option<&EventRecord> = None;
    let mut base_gcs: Option<f64> = None;
    for e in events.iter().filter(|e| in_baseline(e)) {
        match e.signal {
            SignalKind::Creatinine => {
                if base_creat.is_none_or(|b| e.charttime >= b.charttime) {
                    base_creat = Some(e);
                }
            }
            SignalKind::Gcs => base_gcs = Some(base_gcs.map_or(e.value, |g: f64| g.max(e.value))),
            _ => {}
        }
    }

    let renal = match (base_creat, peak) {
        (Some(b), Some(p)) => milli(p) - milli(b.value) > milli(cfg.creat_delta) && p > cfg.creat_peak,
        _ => false,
    };
    let gcs = match (base_gcs, low_gcs) {
        (Some(b), Some(l)) => milli(b) - milli(l) > milli(cfg.gcs_drop),
        _ => false,
    };
    CetLabels::new(
        low_spo2 >= cfg.spo2_min_count || high_rr >= cfg.rr_min_count,
        hemo,
        renal,
        sedation || gcs,
    )
}

/// Exhaustive pairwise AUC with ties counted as one half.
pub fn pairwise_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, sj) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Feature row with every column fixed except the two given.
pub fn row_with(id: usize, a: (&str, f64), b: (&str, f64)) -> FeatureVector {
    let mut values = [Some(0.0); N_FEATURES];
    for (k, v) in values.iter_mut().enumerate() {
        *v = Some(k as f64);
    }
    values[feature_index(a.0).unwrap()] = Some(a.1);
    values[feature_index(b.0).unwrap()] = Some(b.1);
    FeatureVector {
        stay_id: id.to_string(),
        values,
    }
}

/// XOR of the signs of two features placed in the `rr_max` and `map_min`
/// columns; every label equals the XOR bit.
pub fn xor_dataset(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<CetLabels>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            // Balanced quadrants.
            let (sa, sb) = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)][i % 4];
            let a = sa * rng.gen_range(0.05..1.0);
            let b = sb * rng.gen_range(0.05..1.0);
            let y = (a > 0.0) != (b > 0.0);
            (
                row_with(i, ("rr_max", a), ("map_min", b)),
                CetLabels::new(y, y, y, y),
            )
        })
        .unzip()
}

pub fn exact_match_accuracy(truth: &[CetLabels], pred: &[CetLabels]) -> f64 {
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
