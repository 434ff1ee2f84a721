//! Confusion matrices and run reports.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// `K×K` counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfusion")]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Deserialize)]
struct RawConfusion {
    classes: usize,
    counts: Vec<u64>,
}

impl TryFrom<RawConfusion> for ConfusionMatrix {
    type Error = Error;

    fn try_from(raw: RawConfusion) -> Result<Self> {
        Self::from_counts(raw.classes, raw.counts)
    }
}

impl ConfusionMatrix {
    /// Row-major `classes × classes` counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        ensure!(
            counts.len() == classes * classes,
            "{} counts do not form a {}x{} matrix",
            counts.len(),
            classes,
            classes
        );
        Ok(Self { classes, counts })
    }

    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(classes);
        for &(truth, pred) in pairs {
            m.record(truth, pred)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        ensure!(
            truth < self.classes && predicted < self.classes,
            "class index out of range ({} / {}) for {} classes",
            truth,
            predicted,
            self.classes
        );
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.classes.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub class_names: Vec<String>,
    pub epochs: Vec<EpochLog>,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl RunReport {
    pub fn new(class_names: Vec<String>, epochs: Vec<EpochLog>, confusion: ConfusionMatrix) -> Self {
        Self {
            class_names,
            epochs,
            test_accuracy: confusion.accuracy(),
            confusion,
        }
    }
}
