//! Confusion matrix, accuracy, per-class precision/recall/F1 and a
//! plain-text classification report.
//!
//! Any score with a zero denominator is reported as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("truth has {truth} entries but predictions have {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("class index {index} out of range for {k} classes")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("{labels} labels given for {k} classes")]
    LabelCount { labels: usize, k: usize },
}

/// `cells[i][j]` counts items of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    cells: Vec<Vec<u64>>,
    labels: Vec<String>,
}

/// Per-class counts derived from a confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn confusion_matrix(
    truth: &[usize],
    pred: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut cells = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        for index in [t, p] {
            if index >= k {
                return Err(MetricsError::IndexOutOfRange { index, k });
            }
        }
        cells[t][p] += 1;
    }
    let labels = (0..k).map(|i| i.to_string()).collect();
    Ok(ConfusionMatrix { k, cells, labels })
}

impl ConfusionMatrix {
    pub fn with_labels<S: AsRef<str>>(mut self, labels: &[S]) -> Result<Self, MetricsError> {
        if labels.len() != self.k {
            return Err(MetricsError::LabelCount {
                labels: labels.len(),
                k: self.k,
            });
        }
        self.labels = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.cells[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.cells[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.cells.iter().map(|row| row[j]).sum()
    }

    pub fn class_counts(&self, i: usize) -> ClassCounts {
        let tp = self.cells[i][i];
        let fp = self.col_sum(i) - tp;
        let fn_ = self.row_sum(i) - tp;
        let tn = self.total() - tp - fp - fn_;
        ClassCounts { tp, fp, fn_, tn }
    }

    /// CSV: a header of labels, then one `true_label,c_1,...,c_k` row per class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_label");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.cells) {
            out.push_str(label);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Percentage of items on the diagonal.
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(m.trace() as f64 / total as f64 * 100.0)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub per_class: Vec<ClassScores>,
    pub macro_avg: ClassScores,
    pub weighted_avg: ClassScores,
}

pub fn precision_recall_f1(m: &ConfusionMatrix) -> Result<Scores, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let per_class: Vec<ClassScores> = (0..m.k)
        .map(|i| {
            let c = m.class_counts(i);
            let precision = ratio(c.tp, c.tp + c.fp);
            let recall = ratio(c.tp, c.tp + c.fn_);
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: c.tp + c.fn_,
            }
        })
        .collect();
    let k = m.k as f64;
    let macro_avg = ClassScores {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
        support: total,
    };
    let weighted = |f: fn(&ClassScores) -> f64| {
        per_class
            .iter()
            .map(|c| f(c) * c.support as f64)
            .sum::<f64>()
            / total as f64
    };
    let weighted_avg = ClassScores {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
        support: total,
    };
    Ok(Scores {
        per_class,
        macro_avg,
        weighted_avg,
    })
}

/// Confusion matrix together with every derived score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub matrix: ConfusionMatrix,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub scores: Scores,
}

impl EvalResult {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Result<Self, MetricsError> {
        let accuracy = accuracy(&matrix)?;
        let scores = precision_recall_f1(&matrix)?;
        Ok(Self {
            matrix,
            accuracy,
            scores,
        })
    }

    /// Accuracy as a fraction in `[0, 1]`.
    pub fn accuracy_fraction(&self) -> f64 {
        self.accuracy / 100.0
    }
}

/// Renders a column-aligned report: one row per label, then accuracy,
/// macro-average and weighted-average rows.
pub fn classification_report(r: &EvalResult) -> String {
    let names = ["accuracy", "macro avg", "weighted avg"];
    let width = r
        .matrix
        .labels()
        .iter()
        .map(String::len)
        .chain(names.iter().map(|n| n.len()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>width$} {:>10} {:>10} {:>10} {:>10}",
        "", "precision", "recall", "f1-score", "support"
    );
    out.push('\n');
    for (label, c) in r.matrix.labels().iter().zip(&r.scores.per_class) {
        let _ = writeln!(
            out,
            "{:>width$} {:>10.2} {:>10.2} {:>10.2} {:>10}",
            label, c.precision, c.recall, c.f1, c.support
        );
    }
    out.push('\n');
    let total = r.matrix.total();
    let _ = writeln!(
        out,
        "{:>width$} {:>10} {:>10} {:>10.2} {:>10}",
        names[0],
        "",
        "",
        r.accuracy_fraction(),
        total
    );
    for (name, c) in names[1..]
        .iter()
        .zip([&r.scores.macro_avg, &r.scores.weighted_avg])
    {
        let _ = writeln!(
            out,
            "{:>width$} {:>10.2} {:>10.2} {:>10.2} {:>10}",
            name, c.precision, c.recall, c.f1, c.support
        );
    }
    out.push('\n');
    let _ = writeln!(out, "accuracy: {:.2}%", r.accuracy);
    out.push_str("note: precision, recall and f1 with a zero denominator are reported as 0.00\n");
    out
}
