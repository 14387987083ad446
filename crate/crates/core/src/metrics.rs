//! Confusion-matrix construction and one-vs-rest classification metrics:
//! accuracy, recall, precision, and F1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// C x C counts; rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    /// Tallies (true, predicted) label pairs. Labels must lie in
    /// `[0, num_classes)`.
    pub fn from_labels(true_labels: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if true_labels.len() != predicted.len() {
            return Err(Error::Input(format!(
                "{} true labels vs {} predictions",
                true_labels.len(),
                predicted.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Input("need at least one class".into()));
        }
        let mut counts = vec![0u64; num_classes * num_classes];
        for (&t, &p) in true_labels.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::Input(format!(
                    "label pair ({t}, {p}) out of range [0, {num_classes})"
                )));
            }
            counts[t * num_classes + p] += 1;
        }
        let class_names = (0..num_classes).map(|i| format!("class{i}")).collect();
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes() {
            return Err(Error::Input(format!(
                "{} names for {} classes",
                names.len(),
                self.num_classes()
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn count(&self, true_class: usize, predicted_class: usize) -> u64 {
        self.counts[true_class * self.num_classes() + predicted_class]
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        let c = self.num_classes();
        self.counts[true_class * c..(true_class + 1) * c].iter().sum()
    }

    pub fn col_sum(&self, predicted_class: usize) -> u64 {
        let c = self.num_classes();
        (0..c).map(|t| self.counts[t * c + predicted_class]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// One-vs-rest counts for `positive`: TP is the diagonal cell, FN the
    /// rest of its row, FP the rest of its column, TN everything else.
    pub fn binary_counts(&self, positive: usize) -> Result<BinaryCounts> {
        let c = self.num_classes();
        if positive >= c {
            return Err(Error::Input(format!("positive class {positive} out of range [0, {c})")));
        }
        let true_pos = self.count(positive, positive);
        let false_neg = self.row_sum(positive) - true_pos;
        let false_pos = self.col_sum(positive) - true_pos;
        let true_neg = self.total() - true_pos - false_neg - false_pos;
        Ok(BinaryCounts { true_pos, false_pos, true_neg, false_neg })
    }

    /// Micro accuracy: trace / total. Empty matrix is an input error.
    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Input("empty confusion matrix".into()));
        }
        let c = self.num_classes();
        let trace: u64 = (0..c).map(|i| self.counts[i * c + i]).sum();
        Ok(trace as f64 / total as f64)
    }
}

/// One-vs-rest tallies for a designated positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// `(TN + TP) / (TN + TP + FN + FP)`; 0 when the denominator is 0.
pub fn accuracy(c: &BinaryCounts) -> f64 {
    ratio(c.true_pos + c.true_neg, c.total())
}

/// `TP / (TP + FN)`; 0 when the denominator is 0.
pub fn recall(c: &BinaryCounts) -> f64 {
    ratio(c.true_pos, c.true_pos + c.false_neg)
}

/// `TP / (TP + FP)`; 0 when the denominator is 0.
pub fn precision(c: &BinaryCounts) -> f64 {
    ratio(c.true_pos, c.true_pos + c.false_pos)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(c: &BinaryCounts) -> f64 {
    f1_from(precision(c), recall(c))
}

/// `2 P R / (P + R)`, defined as 0 when `P + R == 0`.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics for a single class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced any metric to the 0 convention.
    pub degenerate: bool,
}

/// Per-class precision/recall/F1 with overall accuracy, mirroring a
/// `Class | Precision | Recall | F-measure` results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    /// Name of the designated positive class for one-vs-rest summaries.
    pub positive_class: String,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix, positive: usize) -> Result<Self> {
        if positive >= cm.num_classes() {
            return Err(Error::Input(format!(
                "positive class {positive} out of range [0, {})",
                cm.num_classes()
            )));
        }
        let overall_accuracy = cm.overall_accuracy()?;
        let mut per_class = Vec::with_capacity(cm.num_classes());
        for i in 0..cm.num_classes() {
            let counts = cm.binary_counts(i)?;
            let degenerate =
                counts.true_pos + counts.false_neg == 0 || counts.true_pos + counts.false_pos == 0;
            per_class.push(ClassMetrics {
                class: cm.class_names()[i].clone(),
                precision: precision(&counts),
                recall: recall(&counts),
                f1: f1(&counts),
                degenerate,
            });
        }
        let positive_class = cm.class_names()[positive].clone();
        Ok(MetricsReport { confusion: cm, per_class, overall_accuracy, positive_class })
    }

    /// Aligned text table: one row per class plus an overall-accuracy
    /// footer. Values are rounded to two decimals.
    pub fn text_table(&self) -> String {
        let name_width = self
            .per_class
            .iter()
            .map(|c| c.class.len())
            .chain(["Overall accuracy".len()].into_iter())
            .max()
            .unwrap_or(16);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<name_width$} | Precision | Recall | F-measure\n",
            "Class"
        ));
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<name_width$} | {:>9.2} | {:>6.2} | {:>9.2}\n",
                c.class, c.precision, c.recall, c.f1
            ));
        }
        out.push_str(&format!(
            "{:<name_width$} | {:.2}\n",
            "Overall accuracy", self.overall_accuracy
        ));
        out
    }
}
