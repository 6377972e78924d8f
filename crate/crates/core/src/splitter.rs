//! Multilabel iterative stratification for the train/test split and the
//! cross-validation folds.
//!
//! Each side (train/test, or fold) starts with a desired total size and a
//! desired count per label proportional to its size. Labels are processed
//! scarcest first: every still-unassigned example carrying the label goes
//! to the side that most wants that label, then the side with the most room
//! overall, then a seeded coin flip. Examples without any positive label go
//! last, by remaining room only.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CetError, Result};
use crate::labeler::{CetLabels, Label};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// `(train, validation)` index lists for fold `f`.
    pub fn fold(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (i, &g) in self.fold_of.iter().enumerate() {
            if g == f {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        (train, valid)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Side with the largest key among those with a key; ties are drawn from `rng`.
fn argmax_with_ties<F: Fn(usize) -> Option<(f64, f64)>>(sides: usize, key: F, rng: &mut ChaCha8Rng) -> usize {
    let mut best: Vec<usize> = Vec::with_capacity(sides);
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for j in 0..sides {
        let Some(k) = key(j) else {
            continue;
        };
        if best.is_empty() || k > best_key {
            best_key = k;
            best.clear();
            best.push(j);
        } else if k == best_key {
            best.push(j);
        }
    }
    if best.len() == 1 {
        best[0]
    } else {
        best[rng.gen_range(0..best.len())]
    }
}

/// Assign every example to one of `sizes.len()` sides.
fn iterative_stratification(labels: &[CetLabels], sizes: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = labels.len();
    let sides = sizes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let totals: Vec<usize> = Label::ALL
        .iter()
        .map(|l| labels.iter().filter(|y| y.get(*l)).count())
        .collect();
    let mut room: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let mut wanted: Vec<[f64; 4]> = sizes
        .iter()
        .map(|&s| {
            let mut w = [0.0; 4];
            for (l, t) in totals.iter().enumerate() {
                w[l] = *t as f64 * s as f64 / n as f64;
            }
            w
        })
        .collect();

    let mut side_of: Vec<Option<usize>> = vec![None; n];
    let mut remaining = totals.clone();
    while let Some(label) = Label::ALL
        .iter()
        .copied()
        .filter(|l| remaining[l.index()] > 0)
        .min_by_key(|l| (remaining[l.index()], l.index()))
    {
        let l = label.index();
        for &i in &order {
            if side_of[i].is_some() || !labels[i].get(label) {
                continue;
            }
            // A full side is never chosen, so the requested sizes hold exactly.
            let j = argmax_with_ties(sides, |j| (room[j] > 0.0).then(|| (wanted[j][l], room[j])), rng);
            side_of[i] = Some(j);
            room[j] -= 1.0;
            for other in Label::ALL {
                if labels[i].get(other) {
                    wanted[j][other.index()] -= 1.0;
                    remaining[other.index()] -= 1;
                }
            }
        }
    }

    for &i in &order {
        if side_of[i].is_none() {
            let j = argmax_with_ties(sides, |j| (room[j] > 0.0).then_some((room[j], 0.0)), rng);
            side_of[i] = Some(j);
            room[j] -= 1.0;
        }
    }
    side_of.into_iter().map(|s| s.expect("all assigned")).collect()
}

pub fn stratified_shuffle_split(
    labels: &[CetLabels],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    let n = labels.len();
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CetError::DegenerateFraction(test_fraction));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(CetError::DegenerateFraction(test_fraction));
    }
    let mut rng = rng_for(seed, "split", 0);
    let side = iterative_stratification(labels, &[n - n_test, n_test], &mut rng);
    let (mut train_indices, mut test_indices) = (Vec::new(), Vec::new());
    for (i, s) in side.into_iter().enumerate() {
        if s == 0 {
            train_indices.push(i);
        } else {
            test_indices.push(i);
        }
    }
    Ok(SplitAssignment {
        train_indices,
        test_indices,
    })
}

pub fn stratified_kfold(labels: &[CetLabels], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = labels.len();
    if k < 2 || n < k {
        return Err(CetError::TooFewSamples { n, k });
    }
    let sizes: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
    let mut rng = rng_for(seed, "kfold", k as u64);
    Ok(FoldAssignment {
        k,
        fold_of: iterative_stratification(labels, &sizes, &mut rng),
    })
}

/// Write `split.csv`-style rows: `stay_id,assignment`.
pub fn write_assignment<W: std::io::Write>(ids: &[String], assignment: &[String], out: W) -> Result<()> {
    if ids.len() != assignment.len() {
        return Err(CetError::LengthMismatch("stay ids vs assignments".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stay_id", "assignment"])?;
    for (id, a) in ids.iter().zip(assignment) {
        w.write_record([id, a])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignment<R: std::io::Read>(input: R) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    for name in ["stay_id", "assignment"] {
        if !headers.iter().any(|h| h == name) {
            return Err(CetError::MissingColumn(name.into()));
        }
    }
    let id = headers.iter().position(|h| h == "stay_id").unwrap();
    let a = headers.iter().position(|h| h == "assignment").unwrap();
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((
                r.get(id).unwrap_or("").to_string(),
                r.get(a).unwrap_or("").to_string(),
            ))
        })
        .collect()
}
