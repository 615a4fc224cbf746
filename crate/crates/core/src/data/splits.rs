//! Subject-wise train/val/test splits and k-fold cross-validation.
//!
//! All assignments are by subject, never by window, so no subject leaks
//! across partitions.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Disjoint subject sets covering the whole population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SubjectSplit {
    pub fn contains(&self, subject: &str) -> bool {
        self.train.contains(subject) || self.val.contains(subject) || self.test.contains(subject)
    }

    /// Line-oriented key=value serialization.
    pub fn to_kv(&self) -> String {
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(",");
        format!(
            "train={}\nval={}\ntest={}\n",
            join(&self.train),
            join(&self.val),
            join(&self.test)
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut train = None;
        let mut val = None;
        let mut test = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("split line without '=': '{line}'")))?;
            let set: BTreeSet<String> = value
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().to_string())
                .collect();
            match key.trim() {
                "train" => train = Some(set),
                "val" => val = Some(set),
                "test" => test = Some(set),
                other => return Err(Error::data(format!("unknown split key '{other}'"))),
            }
        }
        match (train, val, test) {
            (Some(train), Some(val), Some(test)) => Ok(SubjectSplit { train, val, test }),
            _ => Err(Error::data("split text missing train/val/test lines")),
        }
    }
}

fn check_ratio(ratio: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = ratio;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(Error::config(format!("split ratios must be positive, got {ratio:?}")));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must sum to 1, got {}",
            a + b + c
        )));
    }
    Ok(())
}

/// Split subjects into train/val/test by ratio.
///
/// Sizes are `floor(ratio * n)` with the remainder handed out in the order
/// train, val, test. Deterministic for a given seed.
pub fn split_subjects(
    subjects: &BTreeSet<String>,
    ratio: (f64, f64, f64),
    seed: u64,
) -> Result<SubjectSplit> {
    check_ratio(ratio)?;
    let n = subjects.len();
    if n < 3 {
        return Err(Error::data(format!("need at least 3 subjects to split, got {n}")));
    }

    let mut sizes = [
        (ratio.0 * n as f64).floor() as usize,
        (ratio.1 * n as f64).floor() as usize,
        (ratio.2 * n as f64).floor() as usize,
    ];
    let mut remainder = n - sizes.iter().sum::<usize>();
    for s in &mut sizes {
        if remainder == 0 {
            break;
        }
        *s += 1;
        remainder -= 1;
    }

    let mut pool: Vec<String> = subjects.iter().cloned().collect();
    Rng::substream(seed, &[0x5711]).shuffle(&mut pool);

    let train: BTreeSet<String> = pool.drain(..sizes[0]).collect();
    let val: BTreeSet<String> = pool.drain(..sizes[1]).collect();
    let test: BTreeSet<String> = pool.drain(..).collect();
    Ok(SubjectSplit { train, val, test })
}

/// k-fold cross-validation over subjects.
///
/// Each subject lands in exactly one test fold; within a fold the remaining
/// subjects are divided train/val by `train_val_ratio` (floor for val,
/// remainder to train, but always at least one train subject).
pub fn kfold_subjects(
    subjects: &BTreeSet<String>,
    k: usize,
    train_val_ratio: (f64, f64),
    seed: u64,
) -> Result<Vec<SubjectSplit>> {
    let n = subjects.len();
    if k < 2 {
        return Err(Error::config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::data(format!("k = {k} exceeds {n} subjects")));
    }
    let (rt, rv) = train_val_ratio;
    if rt <= 0.0 || rv < 0.0 {
        return Err(Error::config(format!(
            "train/val ratio must be positive/non-negative, got {train_val_ratio:?}"
        )));
    }

    let mut pool: Vec<String> = subjects.iter().cloned().collect();
    Rng::substream(seed, &[0xf01d]).shuffle(&mut pool);

    // Fold sizes differ by at most one; the first n % k folds get the extra.
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for fold_idx in 0..k {
        let size = base + usize::from(fold_idx < extra);
        let test: BTreeSet<String> = pool[start..start + size].iter().cloned().collect();
        start += size;

        let mut rest: Vec<String> = pool
            .iter()
            .filter(|s| !test.contains(*s))
            .cloned()
            .collect();
        Rng::substream(seed, &[0xf01d, 1 + fold_idx as u64]).shuffle(&mut rest);
        let val_share = rv / (rt + rv);
        let mut n_val = (val_share * rest.len() as f64).floor() as usize;
        if n_val >= rest.len() {
            n_val = rest.len().saturating_sub(1);
        }
        let val: BTreeSet<String> = rest.drain(..n_val).collect();
        let train: BTreeSet<String> = rest.into_iter().collect();
        folds.push(SubjectSplit { train, val, test });
    }
    Ok(folds)
}
