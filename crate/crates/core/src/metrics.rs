//! Classification metrics: accuracy, F1, PR-AUC, confusion matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::losses::{cce_loss, mse_loss, one_hot, PredictionBatch};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    n_classes: usize,
}

impl ConfusionMatrix {
    pub fn from_labels(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        check_lengths(y_true.len(), y_pred.len())?;
        let mut counts = vec![0; n_classes * n_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "label pair ({t}, {p}) out of range for {n_classes} classes"
                )));
            }
            counts[t * n_classes + p] += 1;
        }
        Ok(Self { counts, n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    fn predicted(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, c)).sum()
    }

    fn actual(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(c, p)).sum()
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{a} predictions"),
            actual: format!("{b} predictions"),
        });
    }
    Ok(())
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows(probs: &DMatrix<f64>) -> Vec<usize> {
    probs
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(y_true: &[usize], probs: &DMatrix<f64>) -> Result<f64> {
    check_lengths(y_true.len(), probs.nrows())?;
    let hits = y_true
        .iter()
        .zip(argmax_rows(probs))
        .filter(|(t, p)| **t == *p)
        .count();
    Ok(hits as f64 / y_true.len() as f64)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro- and macro-averaged F1. Classes with no predictions or no support
/// contribute an F1 of 0 to the macro average.
pub fn f1_scores(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<(f64, f64)> {
    let cm = ConfusionMatrix::from_labels(y_true, y_pred, n_classes)?;
    Ok(f1_from_confusion(&cm))
}

pub fn f1_from_confusion(cm: &ConfusionMatrix) -> (f64, f64) {
    let n = cm.n_classes();
    let mut tp_sum = 0;
    let mut macro_sum = 0.0;
    for c in 0..n {
        let tp = cm.true_positives(c);
        tp_sum += tp;
        let precision = ratio(tp, cm.predicted(c));
        let recall = ratio(tp, cm.actual(c));
        if precision + recall > 0.0 {
            macro_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    // Pooled precision and recall are both tp / total for single-label data.
    let micro = ratio(tp_sum, cm.total());
    (micro, macro_sum / n as f64)
}

/// Average precision of binary-labelled scores: `Σ (R_k − R_{k−1}) · P_k`
/// over thresholds at each distinct score, highest first.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), positive.len())?;
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += positive[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

fn check_probs(y_true: &DMatrix<f64>, probs: &DMatrix<f64>) -> Result<()> {
    if y_true.shape() != probs.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", y_true.shape()),
            actual: format!("{:?}", probs.shape()),
        });
    }
    check_lengths(y_true.nrows(), probs.nrows())
}

/// Micro-averaged one-vs-rest PR-AUC: every (sample, class) pair is pooled
/// into a single binary ranking problem.
pub fn pr_auc(y_true: &DMatrix<f64>, probs: &DMatrix<f64>) -> Result<f64> {
    check_probs(y_true, probs)?;
    let positive: Vec<bool> = y_true.iter().map(|&v| v > 0.5).collect();
    let scores: Vec<f64> = probs.iter().copied().collect();
    average_precision(&scores, &positive)
}

/// Unweighted mean of per-class average precision over classes that have at
/// least one positive sample.
pub fn pr_auc_macro(y_true: &DMatrix<f64>, probs: &DMatrix<f64>) -> Result<f64> {
    check_probs(y_true, probs)?;
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..y_true.ncols() {
        let positive: Vec<bool> = y_true.column(c).iter().map(|&v| v > 0.5).collect();
        if !positive.contains(&true) {
            continue;
        }
        let scores: Vec<f64> = probs.column(c).iter().copied().collect();
        sum += average_precision(&scores, &positive)?;
        classes += 1;
    }
    if classes == 0 {
        return Err(Error::UndefinedMetric(
            "no class has a positive label".into(),
        ));
    }
    Ok(sum / classes as f64)
}

/// Every quantity tracked per epoch on the test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub pr_auc: f64,
    pub pr_auc_macro: f64,
    pub cce: f64,
    pub mse: f64,
}

impl MetricsReport {
    pub fn evaluate(labels: &[usize], probs: &DMatrix<f64>) -> Result<Self> {
        check_lengths(labels.len(), probs.nrows())?;
        let n_classes = probs.ncols();
        let targets = one_hot(labels, n_classes);
        let predicted = argmax_rows(probs);
        let (f1_micro, f1_macro) = f1_scores(labels, &predicted, n_classes)?;
        let batch = PredictionBatch::from_raw(targets, probs.clone())?;
        Ok(Self {
            accuracy: accuracy(labels, probs)?,
            f1_micro,
            f1_macro,
            pr_auc: pr_auc(batch.y_true(), probs)?,
            pr_auc_macro: pr_auc_macro(batch.y_true(), probs)?,
            cce: cce_loss(&batch).value,
            mse: mse_loss(&batch).value,
        })
    }
}
