//! Accuracy, binary F1 and Matthews correlation.
//!
//! Zero-denominator conventions: F1 is 0 when precision + recall is 0, and MCC
//! is 0 when any marginal count is 0.

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts with `positive` as the positive class and every other label
    /// negative.
    pub fn from_labels(preds: &[usize], golds: &[usize], positive: usize) -> Result<Self> {
        check_lengths(preds, golds)?;
        let mut c = Self::default();
        for (&p, &g) in preds.iter().zip(golds) {
            match (p == positive, g == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn f1(&self) -> f64 {
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        if factors.contains(&0.0) {
            return 0.0;
        }
        (tp * tn - fp * fn_) / sqrt(factors.iter().product())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn f1_binary(preds: &[usize], golds: &[usize], positive_class: usize) -> Result<f64> {
    Ok(ConfusionCounts::from_labels(preds, golds, positive_class)?.f1())
}

/// Labels must be 0 or 1.
pub fn matthews_corr(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds, golds)?;
    if let Some(&bad) = preds.iter().chain(golds).find(|&&l| l > 1) {
        return Err(Error::NonBinary(bad));
    }
    Ok(ConfusionCounts::from_labels(preds, golds, 1)?.mcc())
}

/// The three reported metrics of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub mcc: f64,
}

impl Scores {
    /// F1 and MCC treat class 1 as positive; with more than two classes MCC is
    /// reported as 0.
    pub fn compute(preds: &[usize], golds: &[usize]) -> Result<Self> {
        let binary = preds.iter().chain(golds).all(|&l| l <= 1);
        Ok(Self {
            accuracy: accuracy(preds, golds)?,
            f1: f1_binary(preds, golds, 1)?,
            mcc: if binary { matthews_corr(preds, golds)? } else { 0.0 },
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
            Metric::Mcc => self.mcc,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Accuracy,
    F1,
    Mcc,
}
