//! Multi-label evaluation: thresholding, Jaccard accuracy, micro/macro F1 and
//! the per-emotion breakdown.

use std::fmt::Write as _;

use crate::error::{PanError, Result};
use crate::numerics::Tensor;
use crate::textprep::{Dataset, EMOTIONS};

/// Row-major `rows × labels` binary matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    labels: usize,
    cells: Vec<bool>,
}

impl LabelMatrix {
    pub fn new(rows: usize, labels: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * labels {
            return Err(PanError::dim("LabelMatrix::new", &[rows, labels], &[cells.len()]));
        }
        Ok(LabelMatrix { rows, labels, cells })
    }

    pub fn from_rows<R: AsRef<[bool]>>(rows: &[R], labels: usize) -> Result<Self> {
        let mut cells = Vec::with_capacity(rows.len() * labels);
        for r in rows {
            let r = r.as_ref();
            if r.len() != labels {
                return Err(PanError::dim("LabelMatrix::from_rows", &[labels], &[r.len()]));
            }
            cells.extend_from_slice(r);
        }
        LabelMatrix::new(rows.len(), labels, cells)
    }

    /// Gold labels of a dataset.
    pub fn gold(data: &Dataset) -> Self {
        let rows: Vec<_> = data.examples.iter().map(|e| e.labels).collect();
        LabelMatrix::from_rows(&rows, EMOTIONS.len()).expect("fixed label width")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, row: usize, label: usize) -> bool {
        self.cells[row * self.labels + label]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.cells[row * self.labels..(row + 1) * self.labels]
    }

    /// Positives per label column.
    pub fn column_sums(&self) -> Vec<usize> {
        let mut out = vec![0; self.labels];
        for r in 0..self.rows {
            for (o, &c) in out.iter_mut().zip(self.row(r)) {
                *o += usize::from(c);
            }
        }
        out
    }
}

/// `1` where the score is strictly greater than `tau`.
pub fn threshold(scores: &Tensor, tau: f64) -> Result<LabelMatrix> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(PanError::Config(format!("threshold {tau} must lie in (0, 1)")));
    }
    let (rows, labels) = scores.dims2()?;
    LabelMatrix::new(rows, labels, scores.values().iter().map(|&v| v > tau).collect())
}

fn same_shape(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<()> {
    if pred.rows != gold.rows || pred.labels != gold.labels {
        return Err(PanError::dim("metrics", &[pred.rows, pred.labels], &[gold.rows, gold.labels]));
    }
    Ok(())
}

/// Mean over examples of `|P ∩ G| / |P ∪ G|`; an example with both sets empty
/// scores 1. An empty dataset scores 0.
pub fn jaccard_accuracy(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<f64> {
    same_shape(pred, gold)?;
    if pred.rows == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in 0..pred.rows {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &g) in pred.row(r).iter().zip(gold.row(r)) {
            inter += usize::from(p && g);
            union += usize::from(p || g);
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(total / pred.rows as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
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

#[derive(Clone, Debug, PartialEq)]
pub struct F1Scores {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
}

/// Per-class precision/recall/F1 (0/0 := 0), micro F1 over pooled counts and
/// macro F1 as the unweighted mean of class F1s.
pub fn f1_scores(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<F1Scores> {
    same_shape(pred, gold)?;
    let mut counts = vec![(0usize, 0usize, 0usize); pred.labels];
    for r in 0..pred.rows {
        for (c, (&p, &g)) in pred.row(r).iter().zip(gold.row(r)).enumerate() {
            let entry = &mut counts[c];
            match (p, g) {
                (true, true) => entry.0 += 1,
                (true, false) => entry.1 += 1,
                (false, true) => entry.2 += 1,
                (false, false) => {}
            }
        }
    }
    let per_class: Vec<ClassScores> = counts
        .iter()
        .map(|&(tp, fp, fn_)| {
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: tp + fn_,
            }
        })
        .collect();
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let micro_f1 = harmonic(ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok(F1Scores {
        micro_f1,
        macro_f1,
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub jaccard: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub label_names: Vec<String>,
}

impl MetricsReport {
    pub fn compute(pred: &LabelMatrix, gold: &LabelMatrix, label_names: &[&str]) -> Result<Self> {
        if label_names.len() != gold.labels {
            return Err(PanError::dim("MetricsReport", &[gold.labels], &[label_names.len()]));
        }
        let f1 = f1_scores(pred, gold)?;
        Ok(MetricsReport {
            jaccard: jaccard_accuracy(pred, gold)?,
            micro_f1: f1.micro_f1,
            macro_f1: f1.macro_f1,
            per_class: f1.per_class,
            label_names: label_names.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// The three headline metrics, one per line.
    pub fn summary(&self) -> String {
        format!(
            "Jaccard\t{:.4}\nMicro-F1\t{:.4}\nMacro-F1\t{:.4}\n",
            self.jaccard, self.micro_f1, self.macro_f1
        )
    }

    /// Aligned plain-text table, one row per emotion.
    pub fn per_class_table(&self) -> String {
        let width = self.label_names.iter().map(String::len).max().unwrap_or(0).max("emotion".len());
        let mut out = format!(
            "{:<width$}  {:>7}  {:>9}  {:>6}  {:>6}\n",
            "emotion", "support", "precision", "recall", "f1"
        );
        for (name, c) in self.label_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>7}  {:>9.4}  {:>6.4}  {:>6.4}",
                c.support, c.precision, c.recall, c.f1
            );
        }
        out
    }

    /// Machine-readable block: header plus one tab-separated row per emotion.
    pub fn per_class_tsv(&self) -> String {
        let mut out = String::from("emotion\tsupport\tprecision\trecall\tf1\n");
        for (name, c) in self.label_names.iter().zip(&self.per_class) {
            let _ = writeln!(out, "{name}\t{}\t{}\t{}\t{}", c.support, c.precision, c.recall, c.f1);
        }
        out
    }
}

/// Per-emotion table for predictions against gold labels.
pub fn per_class_report(pred: &LabelMatrix, gold: &LabelMatrix, label_names: &[&str]) -> Result<String> {
    Ok(MetricsReport::compute(pred, gold, label_names)?.per_class_table())
}
