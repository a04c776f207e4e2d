//! Confusion matrix and the metrics derived from it.
//!
//! Rows are true classes, columns are predicted classes. Every metric here is
//! computed from the matrix counts alone:
//!
//! * accuracy = trace / total
//! * precision_c = TP_c / (TP_c + FP_c)
//! * recall_c = TP_c / (TP_c + FN_c), which is also the per-class accuracy
//!
//! Macro averages are unweighted means over all `k` classes; weighted
//! averages weight each class by its support (row sum).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, LabelSpace, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    /// Row-major `k * k` counts.
    counts: Vec<u64>,
}

/// One-vs-rest tallies for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PerClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `(TP + TN) / (TP + FP + TN + FN)`, the binary reading of accuracy.
    pub fn one_vs_rest_accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total()).unwrap_or(0.0)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    /// Tallies `counts[t][p]` over paired label sequences.
    pub fn from_labels(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::LengthMismatch { true_len: y_true.len(), pred_len: y_pred.len() });
        }
        if y_true.is_empty() {
            return Err(Error::Empty);
        }
        let mut cm = Self::zeros(k);
        for (&t, &p) in y_true.iter().zip(y_pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut counts = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::LengthMismatch { true_len: k, pred_len: row.len() });
            }
            counts.extend_from_slice(row);
        }
        Ok(Self { k, counts })
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.k {
                return Err(Error::LabelOutOfRange { label, classes: self.k });
            }
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k.max(1)).take(self.k)
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn class_counts(&self, c: usize) -> PerClassCounts {
        let tp = self.get(c, c);
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        let tn = self.total() - tp - fp - fn_;
        PerClassCounts { tp, fp, fn_, tn }
    }

    pub fn per_class_counts(&self) -> Vec<PerClassCounts> {
        (0..self.k).map(|c| self.class_counts(c)).collect()
    }

    pub fn accuracy(&self) -> Result<f64> {
        ratio(self.trace(), self.total()).ok_or(Error::Empty)
    }

    /// Per-class precision; a never-predicted class yields 0 (see
    /// [`ConfusionMatrix::undefined_precision`]).
    pub fn precision_per_class(&self) -> Vec<f64> {
        self.per_class_counts().iter().map(|c| ratio(c.tp, c.tp + c.fp).unwrap_or(0.0)).collect()
    }

    /// Classes whose precision has a zero denominator.
    pub fn undefined_precision(&self) -> Vec<usize> {
        (0..self.k).filter(|&c| self.col_sum(c) == 0).collect()
    }

    pub fn recall_per_class(&self) -> Vec<f64> {
        self.per_class_counts().iter().map(|c| ratio(c.tp, c.tp + c.fn_).unwrap_or(0.0)).collect()
    }

    /// Classes with no true samples.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.k).filter(|&c| self.row_sum(c) == 0).collect()
    }

    /// Diagonal over row sum. Identical to recall, except that classes with no
    /// true samples are `None` instead of 0.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k).map(|c| ratio(self.get(c, c), self.row_sum(c))).collect()
    }

    pub fn macro_precision(&self) -> f64 {
        mean(&self.precision_per_class())
    }

    pub fn macro_recall(&self) -> f64 {
        mean(&self.recall_per_class())
    }

    pub fn weighted_precision(&self) -> f64 {
        self.support_weighted(&self.precision_per_class())
    }

    pub fn weighted_recall(&self) -> f64 {
        self.support_weighted(&self.recall_per_class())
    }

    fn support_weighted(&self, values: &[f64]) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        values.iter().enumerate().map(|(c, v)| v * self.row_sum(c) as f64).sum::<f64>() / total as f64
    }

    /// The `n` largest non-zero off-diagonal cells as `(true, predicted, count)`,
    /// by descending count, ties by `(row, col)`.
    pub fn top_confusions(&self, n: usize) -> Vec<(usize, usize, u64)> {
        let mut cells: Vec<_> = (0..self.k)
            .flat_map(|r| (0..self.k).map(move |c| (r, c)))
            .filter(|&(r, c)| r != c)
            .map(|(r, c)| (r, c, self.get(r, c)))
            .filter(|&(_, _, v)| v > 0)
            .collect();
        cells.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        cells.truncate(n);
        cells
    }

    /// Sum of off-diagonal cells whose row and column both lie in `classes`.
    pub fn off_diagonal_mass_within(&self, classes: &[usize]) -> u64 {
        let mut sum = 0;
        for &r in classes {
            for &c in classes {
                if r != c {
                    sum += self.get(r, c);
                }
            }
        }
        sum
    }

    pub fn off_diagonal_mass(&self) -> u64 {
        self.total() - self.trace()
    }

    /// Relabels classes: old class `i` becomes class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.k);
        for r in 0..self.k {
            for c in 0..self.k {
                out.counts[perm[r] * self.k + perm[c]] = self.get(r, c);
            }
        }
        out
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    /// `None` when the class has no true samples.
    pub accuracy: Option<f64>,
    pub one_vs_rest_accuracy: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub samples: u64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes never predicted; their precision was reported as 0.
    pub zero_division: Vec<String>,
    /// Classes absent from the evaluated labels.
    pub missing_classes: Vec<String>,
}

impl MetricsReport {
    pub fn from_matrix(cm: &ConfusionMatrix, labels: &LabelSpace) -> Result<Self> {
        if labels.len() != cm.num_classes() {
            return Err(Error::LengthMismatch { true_len: labels.len(), pred_len: cm.num_classes() });
        }
        let accuracy = cm.accuracy()?;
        let precision = cm.precision_per_class();
        let recall = cm.recall_per_class();
        let per_acc = cm.per_class_accuracy();
        let per_class = (0..cm.num_classes())
            .map(|c| ClassMetrics {
                class: labels.names()[c].clone(),
                precision: precision[c],
                recall: recall[c],
                accuracy: per_acc[c],
                one_vs_rest_accuracy: cm.class_counts(c).one_vs_rest_accuracy(),
                support: cm.row_sum(c),
            })
            .collect();
        let name = |c: usize| labels.names()[c].clone();
        Ok(Self {
            accuracy,
            macro_precision: cm.macro_precision(),
            macro_recall: cm.macro_recall(),
            weighted_precision: cm.weighted_precision(),
            weighted_recall: cm.weighted_recall(),
            samples: cm.total(),
            per_class,
            zero_division: cm.undefined_precision().into_iter().map(name).collect(),
            missing_classes: cm.empty_rows().into_iter().map(name).collect(),
        })
    }
}
